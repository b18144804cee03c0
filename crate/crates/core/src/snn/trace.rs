use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceKind {
    /// IF neurons standing in for a ReLU.
    Spiking,
    /// Spiking max pooling.
    Pool,
    /// Output layer accumulating current.
    Readout,
    /// Output layer of IF neurons.
    SpikingReadout,
}

/// Record of one stage over the whole horizon. Planes are stored step-major:
/// element `t * n + i` belongs to step `t + 1` and neuron `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceLayer {
    pub kind: TraceKind,
    pub shape: Vec<usize>,
    /// Graph layer whose ANN output this stage's rates approximate.
    pub ann_layer: usize,
    /// Graph layer holding the pre-activation, for IF stages.
    pub pre_layer: Option<usize>,
    /// Input current per step; empty for pooling stages.
    pub currents: Vec<f64>,
    /// Emitted spikes per step; empty for a current readout.
    pub spikes: Vec<u32>,
    /// Negative spikes per step.
    pub neg: Vec<u32>,
    /// Membrane potential after the last step; empty without IF neurons.
    pub final_v: Vec<f64>,
    pub v0: f64,
    pub theta: f64,
    /// Synapses reached downstream by one spike of each neuron.
    pub fan_out: Vec<f64>,
    pub flag_events: u64,
    /// Readout rates pass through a trailing ReLU.
    pub rectify: bool,
}

impl TraceLayer {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn has_neurons(&self) -> bool {
        !self.final_v.is_empty()
    }

    fn column_sum<T: Copy + Into<f64>>(plane: &[T], n: usize, steps: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for row in plane.chunks(n).take(steps) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v.into();
            }
        }
        out
    }

    /// Positive spikes per neuron over the first `steps` steps.
    pub fn spike_totals(&self, steps: usize) -> Vec<u64> {
        let n = self.len();
        let mut out = vec![0u64; n];
        for row in self.spikes.chunks(n).take(steps) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v as u64;
            }
        }
        out
    }

    pub fn neg_totals(&self, steps: usize) -> Vec<u64> {
        let n = self.len();
        let mut out = vec![0u64; n];
        for row in self.neg.chunks(n).take(steps) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v as u64;
            }
        }
        out
    }

    pub fn current_totals(&self, steps: usize) -> Vec<f64> {
        Self::column_sum(&self.currents, self.len(), steps)
    }

    /// Largest deviation from `V(T) = V0 + sum(I) - theta * S` over the
    /// layer's IF neurons, recomputed from the recorded planes.
    pub fn conservation_residual(&self) -> f64 {
        if !self.has_neurons() {
            return 0.0;
        }
        let steps = self.currents.len() / self.len().max(1);
        let sum_i = self.current_totals(steps);
        let s = self.spike_totals(steps);
        self.final_v
            .iter()
            .zip(sum_i.iter().zip(&s))
            .map(|(v, (i, &s))| (v - (self.v0 + i - self.theta * s as f64)).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationTrace {
    pub timesteps: usize,
    pub gamma: u32,
    pub layers: Vec<TraceLayer>,
}

impl SimulationTrace {
    pub fn layer(&self, index: usize) -> Result<&TraceLayer> {
        self.layers.get(index).ok_or(Error::LayerOutOfRange {
            index,
            len: self.layers.len(),
        })
    }

    pub fn output(&self) -> &TraceLayer {
        self.layers.last().expect("trace has a readout")
    }

    pub fn output_rates(&self) -> Vec<f64> {
        firing_rate(self, self.layers.len() - 1, self.timesteps).expect("readout exists")
    }

    pub fn conservation_residual(&self) -> f64 {
        self.layers
            .iter()
            .map(TraceLayer::conservation_residual)
            .fold(0.0, f64::max)
    }

    /// JSON-ready summary with per-layer rates and spike totals.
    pub fn summary(&self) -> TraceSummary {
        let t = self.timesteps;
        TraceSummary {
            timesteps: t,
            gamma: self.gamma,
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| LayerSummary {
                    kind: l.kind,
                    shape: l.shape.clone(),
                    ann_layer: l.ann_layer,
                    spikes: l.spike_totals(t).iter().sum(),
                    negative_spikes: l.neg_totals(t).iter().sum(),
                    flag_events: l.flag_events,
                    rates: firing_rate(self, i, t).expect("index in range"),
                })
                .collect(),
        }
    }

    /// Writes the spike planes as a compact binary file.
    ///
    /// Layout (little endian): magic `SNNTRACE`, `u32` version, `u32` steps,
    /// `u32` layer count, then per layer a `u8` kind, `u32` rank, `u32`
    /// extents, `u8` plane flags (bit 0 spikes, bit 1 negative spikes) and the
    /// present planes as `u16` counts.
    pub fn encode_planes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(TRACE_MAGIC);
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.timesteps as u32).to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.push(kind_code(l.kind));
            out.extend_from_slice(&(l.shape.len() as u32).to_le_bytes());
            for &d in &l.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            let flags = u8::from(!l.spikes.is_empty()) | (u8::from(!l.neg.is_empty()) << 1);
            out.push(flags);
            for plane in [&l.spikes, &l.neg] {
                for &v in plane.iter() {
                    let v = u16::try_from(v)
                        .map_err(|_| Error::Format(format!("spike count {v} does not fit the trace format")))?;
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn save(&self, planes_path: &Path, summary_path: &Path) -> Result<()> {
        std::fs::write(planes_path, self.encode_planes()?).map_err(|e| Error::io(planes_path, e))?;
        let json = serde_json::to_string_pretty(&self.summary())?;
        std::fs::write(summary_path, json).map_err(|e| Error::io(summary_path, e))
    }
}

const TRACE_MAGIC: &[u8; 8] = b"SNNTRACE";

fn kind_code(k: TraceKind) -> u8 {
    match k {
        TraceKind::Spiking => 0,
        TraceKind::Pool => 1,
        TraceKind::Readout => 2,
        TraceKind::SpikingReadout => 3,
    }
}

/// Spike planes read back from [`SimulationTrace::encode_planes`].
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedPlanes {
    pub timesteps: usize,
    /// `(kind code, shape, spikes, negative spikes)` per layer.
    pub layers: Vec<(u8, Vec<usize>, Vec<u32>, Vec<u32>)>,
}

pub fn decode_planes(bytes: &[u8]) -> Result<DecodedPlanes> {
    let bad = || Error::Format("truncated or malformed trace file".into());
    if bytes.get(..8) != Some(&TRACE_MAGIC[..]) {
        return Err(Error::Format("not a trace file".into()));
    }
    let rd = |pos: &mut usize| -> Result<u32> {
        let b = bytes.get(*pos..*pos + 4).ok_or_else(bad)?;
        *pos += 4;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    };
    let mut p = 8usize;
    let version = rd(&mut p)?;
    if version != 1 {
        return Err(Error::Format(format!("unsupported trace version {version}")));
    }
    let timesteps = rd(&mut p)? as usize;
    let nl = rd(&mut p)? as usize;
    let mut layers = Vec::with_capacity(nl);
    for _ in 0..nl {
        let kind = *bytes.get(p).ok_or_else(bad)?;
        p += 1;
        let rank = rd(&mut p)? as usize;
        let shape = (0..rank).map(|_| rd(&mut p).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let flags = *bytes.get(p).ok_or_else(bad)?;
        p += 1;
        let n = timesteps * shape.iter().product::<usize>();
        let mut plane = |present: bool| -> Result<Vec<u32>> {
            if !present {
                return Ok(Vec::new());
            }
            let b = bytes.get(p..p + 2 * n).ok_or_else(bad)?;
            p += 2 * n;
            Ok(b.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as u32).collect())
        };
        let spikes = plane(flags & 1 != 0)?;
        let neg = plane(flags & 2 != 0)?;
        layers.push((kind, shape, spikes, neg));
    }
    if p != bytes.len() {
        return Err(Error::Format("trailing bytes after trace".into()));
    }
    Ok(DecodedPlanes { timesteps, layers })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub kind: TraceKind,
    pub shape: Vec<usize>,
    pub ann_layer: usize,
    pub spikes: u64,
    pub negative_spikes: u64,
    pub flag_events: u64,
    pub rates: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub timesteps: usize,
    pub gamma: u32,
    pub layers: Vec<LayerSummary>,
}

/// Net firing rate of every neuron in `layer` over the first `steps` steps:
/// `(spikes - negative spikes) / steps`, or accumulated current over `steps`
/// for a current readout.
pub fn firing_rate(trace: &SimulationTrace, layer: usize, steps: usize) -> Result<Vec<f64>> {
    let l = trace.layer(layer)?;
    if steps == 0 || steps > trace.timesteps {
        return Err(Error::InvalidConfig(format!(
            "rate horizon {steps} outside 1..={}",
            trace.timesteps
        )));
    }
    let t = steps as f64;
    if l.kind == TraceKind::Readout {
        let rates = l.current_totals(steps).into_iter().map(|c| c / t);
        return Ok(if l.rectify { rates.map(|r| r.max(0.0)).collect() } else { rates.collect() });
    }
    let pos = l.spike_totals(steps);
    let neg = l.neg_totals(steps);
    Ok(pos
        .iter()
        .zip(&neg)
        .map(|(&p, &q)| (p as f64 - q as f64) / t)
        .collect())
}
