//! Integrate-and-fire neurons with soft reset and burst emission.

use crate::error::{Error, Result};

/// Membrane state of one layer of IF neurons.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronLayerState {
    pub v: Vec<f64>,
    pub spike_count: Vec<u64>,
    pub cumulative_current: Vec<f64>,
    pub theta: f64,
    pub v0: f64,
}

impl NeuronLayerState {
    pub fn new(n: usize, theta: f64, v0: f64) -> Self {
        Self {
            v: vec![v0; n],
            spike_count: vec![0; n],
            cumulative_current: vec![0.0; n],
            theta,
            v0,
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Integrates one step of current and writes the emitted spike counts.
    ///
    /// Each neuron emits `clamp(floor(V / theta), 0, gamma)` spikes and loses
    /// `theta` of potential per spike. `layer` and `step` only label errors.
    pub fn step_into(
        &mut self,
        current: &[f64],
        gamma: u32,
        spikes: &mut [u32],
        layer: usize,
        step: usize,
    ) -> Result<()> {
        assert_eq!(current.len(), self.v.len(), "current/state length mismatch");
        if current.iter().any(|i| !i.is_finite()) {
            return Err(Error::NonFiniteCurrent { layer, step });
        }
        for (i, &inp) in current.iter().enumerate() {
            let v = self.v[i] + inp;
            let n = (v / self.theta).floor().clamp(0.0, gamma as f64) as u32;
            self.v[i] = v - n as f64 * self.theta;
            self.cumulative_current[i] += inp;
            self.spike_count[i] += n as u64;
            spikes[i] = n;
        }
        Ok(())
    }

    pub fn step(&mut self, current: &[f64], gamma: u32) -> Result<Vec<u32>> {
        let mut out = vec![0; self.v.len()];
        self.step_into(current, gamma, &mut out, 0, 0)?;
        Ok(out)
    }

    /// Largest deviation from `V = V0 + sum(I) - theta * S`.
    pub fn conservation_residual(&self) -> f64 {
        (0..self.v.len())
            .map(|i| {
                let expect =
                    self.v0 + self.cumulative_current[i] - self.theta * self.spike_count[i] as f64;
                (self.v[i] - expect).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Single-step update of a layer; see [`NeuronLayerState::step_into`].
pub fn step_layer(state: &mut NeuronLayerState, current: &[f64], gamma: u32) -> Result<Vec<u32>> {
    state.step(current, gamma)
}

/// Running maximum of `floor(prefix sum)`, clamped at zero.
///
/// For a soft-reset IF neuron with `theta = 1`, `V(0) = 0` and no burst
/// limit this equals its total spike count.
pub fn spike_count_extremum(currents: &[f64]) -> u64 {
    let mut sum = 0.0;
    let mut best = 0.0f64;
    for &c in currents {
        sum += c;
        best = best.max(sum.floor());
    }
    best as u64
}
