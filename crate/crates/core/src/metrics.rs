//! Error, SIN and energy accounting over simulation traces. Every number is a
//! pure function of a trace and the ANN reference activations.

use serde::{Deserialize, Serialize};

use crate::boa::kl_divergence;
use crate::error::{Error, Result};
use crate::model::{Layer, NetworkGraph};
use crate::snn::{firing_rate, SimulationTrace, SpikingNetwork, Stage, TraceKind, TraceLayer};
use crate::tensor::Tensor;

fn reference<'a>(ann_acts: &'a [Tensor], index: usize, layer: &TraceLayer) -> Result<&'a [f64]> {
    let t = ann_acts.get(index).ok_or(Error::LayerOutOfRange {
        index,
        len: ann_acts.len(),
    })?;
    if t.len() != layer.len() {
        return Err(Error::ShapeMismatch {
            layer: index,
            expected: layer.shape.clone(),
            got: t.shape().to_vec(),
        });
    }
    Ok(t.data())
}

fn is_if(layer: &TraceLayer) -> bool {
    matches!(layer.kind, TraceKind::Spiking | TraceKind::SpikingReadout)
}

/// Neurons that emitted positive spikes although their ANN pre-activation is
/// negative, per trace layer. Layers without IF neurons report 0.
pub fn sin_counts(trace: &SimulationTrace, ann_acts: &[Tensor]) -> Result<Vec<usize>> {
    trace
        .layers
        .iter()
        .map(|l| {
            let Some(pre) = l.pre_layer.filter(|_| is_if(l)) else {
                return Ok(0);
            };
            let a = reference(ann_acts, pre, l)?;
            let s = l.spike_totals(trace.timesteps);
            Ok(a.iter().zip(&s).filter(|(&a, &s)| a < 0.0 && s > 0).count())
        })
        .collect()
}

pub fn sin_ratio(trace: &SimulationTrace, ann_acts: &[Tensor]) -> Result<Vec<f64>> {
    Ok(sin_counts(trace, ann_acts)?
        .into_iter()
        .zip(&trace.layers)
        .map(|(c, l)| c as f64 / l.len() as f64)
        .collect())
}

/// As [`sin_ratio`] but on net counts, after negative spikes.
pub fn residual_sin_ratio(trace: &SimulationTrace, ann_acts: &[Tensor]) -> Result<Vec<f64>> {
    trace
        .layers
        .iter()
        .map(|l| {
            let Some(pre) = l.pre_layer.filter(|_| is_if(l)) else {
                return Ok(0.0);
            };
            let a = reference(ann_acts, pre, l)?;
            let s = l.spike_totals(trace.timesteps);
            let q = l.neg_totals(trace.timesteps);
            let c = a
                .iter()
                .zip(s.iter().zip(&q))
                .filter(|(&a, (&s, &q))| a < 0.0 && s > q)
                .count();
            Ok(c as f64 / l.len() as f64)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateError {
    pub max_abs: f64,
    pub mean_abs: f64,
    /// `None` when either side has no positive mass.
    pub kl: Option<f64>,
}

/// Elementwise distance between the rates of trace layer `layer` and the
/// ANN activation they approximate.
pub fn rate_error(trace: &SimulationTrace, ann_acts: &[Tensor], layer: usize) -> Result<RateError> {
    let l = trace.layer(layer)?;
    let o = reference(ann_acts, l.ann_layer, l)?;
    let r = firing_rate(trace, layer, trace.timesteps)?;
    let diffs: Vec<f64> = r.iter().zip(o).map(|(a, b)| (a - b).abs()).collect();
    let max_abs = diffs.iter().copied().fold(0.0, f64::max);
    let mean_abs = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let kl = match kl_divergence(&r, o) {
        Ok(kl) => Some(kl),
        Err(Error::ZeroDistribution) => {
            let dead = |v: &[f64]| v.iter().all(|&x| x <= 0.0);
            (dead(&r) && dead(o)).then_some(0.0)
        }
        Err(e) => return Err(e),
    };
    Ok(RateError { max_abs, mean_abs, kl })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerError {
    pub kind: TraceKind,
    pub graph_layer: usize,
    pub neurons: usize,
    /// Neurons whose normalized activation reaches the burst ceiling.
    pub clipped: usize,
    pub sin: usize,
    pub sin_ratio: f64,
    pub residual_sin_ratio: f64,
    pub flag_events: u64,
    pub negative_spikes: u64,
    #[serde(flatten)]
    pub error: RateError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub timesteps: usize,
    pub layers: Vec<LayerError>,
    pub output_kl: Option<f64>,
}

pub fn error_report(trace: &SimulationTrace, ann_acts: &[Tensor]) -> Result<ErrorReport> {
    let sin = sin_counts(trace, ann_acts)?;
    let ratio = sin_ratio(trace, ann_acts)?;
    let residual = residual_sin_ratio(trace, ann_acts)?;
    let mut layers = Vec::with_capacity(trace.layers.len());
    for (i, l) in trace.layers.iter().enumerate() {
        let o = reference(ann_acts, l.ann_layer, l)?;
        let ceiling = trace.gamma as f64 * l.theta;
        layers.push(LayerError {
            kind: l.kind,
            graph_layer: l.ann_layer,
            neurons: l.len(),
            clipped: o.iter().filter(|&&v| v >= ceiling).count(),
            sin: sin[i],
            sin_ratio: ratio[i],
            residual_sin_ratio: residual[i],
            flag_events: l.flag_events,
            negative_spikes: l.neg_totals(trace.timesteps).iter().sum(),
            error: rate_error(trace, ann_acts, i)?,
        });
    }
    let output_kl = layers.last().and_then(|l| l.error.kl);
    Ok(ErrorReport {
        timesteps: trace.timesteps,
        layers,
        output_kl,
    })
}

/// Energy per operation in picojoules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyConstants {
    pub e_mac: f64,
    pub e_ac: f64,
}

impl Default for EnergyConstants {
    fn default() -> Self {
        Self { e_mac: 4.6, e_ac: 0.9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub sops: f64,
    pub macs: f64,
    pub constants: EnergyConstants,
    pub e_snn: f64,
    pub e_ann: f64,
    pub ratio: f64,
    /// Mean positive spikes per neuron and step, per trace layer.
    pub mean_firing_rate: Vec<f64>,
}

/// Synaptic operations: every spike, negative ones included, times the
/// emitting neuron's structural fan-out.
pub fn synaptic_ops(trace: &SimulationTrace) -> f64 {
    trace
        .layers
        .iter()
        .map(|l| {
            let s = l.spike_totals(trace.timesteps);
            let q = l.neg_totals(trace.timesteps);
            (0..l.len())
                .map(|i| (s[i] + q[i]) as f64 * l.fan_out[i])
                .sum::<f64>()
        })
        .sum()
}

/// Multiply-accumulates of one dense ANN evaluation, counting only weight
/// taps that land inside the input.
pub fn ann_macs(net: &NetworkGraph) -> f64 {
    net.weighted_layers()
        .into_iter()
        .map(|i| match &net.layers()[i] {
            Layer::Dense(d) => (d.in_features() * d.out_features()) as f64,
            Layer::Conv2d(c) => {
                let in_shape = net.input_shape_of(i);
                let out = net.shape_of(i);
                let (h, w) = (in_shape[1] as isize, in_shape[2] as isize);
                let (kh, kw) = c.kernel();
                let (s, pad) = (c.stride as isize, c.padding as isize);
                let mut taps = 0usize;
                for oy in 0..out[1] as isize {
                    for ox in 0..out[2] as isize {
                        for ky in 0..kh as isize {
                            for kx in 0..kw as isize {
                                let (iy, ix) = (oy * s + ky - pad, ox * s + kx - pad);
                                if iy >= 0 && iy < h && ix >= 0 && ix < w {
                                    taps += 1;
                                }
                            }
                        }
                    }
                }
                (taps * c.in_channels() * c.out_channels()) as f64
            }
            _ => 0.0,
        })
        .sum()
}

pub fn energy_ratio(trace: &SimulationTrace, net: &NetworkGraph, constants: EnergyConstants) -> EnergyReport {
    energy_from_counts(synaptic_ops(trace), ann_macs(net), constants, mean_firing_rates(trace))
}

pub fn energy_from_counts(sops: f64, macs: f64, constants: EnergyConstants, mean_firing_rate: Vec<f64>) -> EnergyReport {
    let e_snn = sops * constants.e_ac;
    let e_ann = macs * constants.e_mac;
    EnergyReport {
        sops,
        macs,
        constants,
        e_snn,
        e_ann,
        ratio: if e_ann > 0.0 { e_snn / e_ann } else { 0.0 },
        mean_firing_rate,
    }
}

pub fn mean_firing_rates(trace: &SimulationTrace) -> Vec<f64> {
    let t = trace.timesteps as f64;
    trace
        .layers
        .iter()
        .map(|l| {
            if l.spikes.is_empty() {
                return 0.0;
            }
            l.spike_totals(trace.timesteps).iter().sum::<u64>() as f64 / (t * l.len() as f64)
        })
        .collect()
}

/// Cumulative input current of selected neurons, one series per id.
pub fn current_trace(trace: &SimulationTrace, layer: usize, neuron_ids: &[usize]) -> Result<Vec<Vec<f64>>> {
    let l = trace.layer(layer)?;
    if l.currents.is_empty() {
        return Err(Error::InvalidConfig(format!("trace layer {layer} records no currents")));
    }
    let n = l.len();
    neuron_ids
        .iter()
        .map(|&id| {
            if id >= n {
                return Err(Error::NeuronOutOfRange { index: id, len: n });
            }
            let mut acc = 0.0;
            Ok(l.currents
                .chunks(n)
                .map(|row| {
                    acc += row[id];
                    acc
                })
                .collect())
        })
        .collect()
}

/// Cumulative current that neuron `source` of trace layer `layer` has
/// delivered to neuron `target` of the next weighted stage: the connecting
/// weight times the source's running net spike count.
pub fn downstream_contribution(
    trace: &SimulationTrace,
    snn: &SpikingNetwork,
    layer: usize,
    source: usize,
    target: usize,
) -> Result<Vec<f64>> {
    let l = trace.layer(layer)?;
    let n = l.len();
    if source >= n {
        return Err(Error::NeuronOutOfRange { index: source, len: n });
    }
    let chain = match snn.stages.get(layer + 1) {
        Some(Stage::Spiking { chain, .. } | Stage::Readout { chain, .. }) => chain,
        _ => {
            return Err(Error::InvalidConfig(format!(
                "trace layer {layer} does not feed a weighted stage"
            )))
        }
    };
    let mut unit = vec![0.0; chain.in_len()];
    unit[source] = 1.0;
    let response = chain.apply(&unit, false);
    let weight = *response.get(target).ok_or(Error::NeuronOutOfRange {
        index: target,
        len: response.len(),
    })?;
    let mut net = 0i64;
    Ok((0..trace.timesteps)
        .map(|t| {
            net += l.spikes[t * n + source] as i64;
            if !l.neg.is_empty() {
                net -= l.neg[t * n + source] as i64;
            }
            weight * net as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(kind: TraceKind, n: usize, spikes: Vec<u32>, neg: Vec<u32>, fan_out: Vec<f64>) -> TraceLayer {
        TraceLayer {
            kind,
            shape: vec![n],
            ann_layer: 1,
            pre_layer: Some(0),
            currents: Vec::new(),
            spikes,
            neg,
            final_v: Vec::new(),
            v0: 0.0,
            theta: 1.0,
            fan_out,
            flag_events: 0,
            rectify: false,
        }
    }

    #[test]
    fn sops_count_spikes_times_fan_out() {
        let tr = SimulationTrace {
            timesteps: 10,
            gamma: 5,
            layers: vec![layer(TraceKind::Spiking, 1, vec![1; 10], Vec::new(), vec![3.0])],
        };
        assert_eq!(synaptic_ops(&tr), 30.0);
    }

    #[test]
    fn zero_spikes_give_zero_ratio() {
        let tr = SimulationTrace {
            timesteps: 4,
            gamma: 5,
            layers: vec![layer(TraceKind::Spiking, 2, vec![0; 8], vec![0; 8], vec![2.0, 2.0])],
        };
        let r = energy_from_counts(synaptic_ops(&tr), 100.0, EnergyConstants::default(), mean_firing_rates(&tr));
        assert_eq!(r.ratio, 0.0);
        assert_eq!(r.mean_firing_rate, vec![0.0]);
    }

    #[test]
    fn rate_error_single_neuron() {
        let tr = SimulationTrace {
            timesteps: 10,
            gamma: 5,
            layers: vec![layer(
                TraceKind::Spiking,
                1,
                vec![1, 0, 0, 1, 0, 0, 1, 0, 0, 0],
                Vec::new(),
                vec![0.0],
            )],
        };
        let acts = vec![Tensor::vector(vec![0.5]), Tensor::vector(vec![0.5])];
        let e = rate_error(&tr, &acts, 0).unwrap();
        assert!((e.max_abs - 0.2).abs() < 1e-12 && (e.mean_abs - 0.2).abs() < 1e-12);
        assert!(e.kl.unwrap() < 1e-12);
    }

    #[test]
    fn all_positive_activations_have_no_sin() {
        let tr = SimulationTrace {
            timesteps: 2,
            gamma: 5,
            layers: vec![layer(TraceKind::Spiking, 2, vec![1, 1, 0, 1], Vec::new(), vec![0.0; 2])],
        };
        let acts = vec![Tensor::vector(vec![0.4, 0.9]), Tensor::vector(vec![0.4, 0.9])];
        assert_eq!(sin_ratio(&tr, &acts).unwrap(), vec![0.0]);
        let neg = vec![Tensor::vector(vec![-0.4, 0.9]), Tensor::vector(vec![0.0, 0.9])];
        assert_eq!(sin_ratio(&tr, &neg).unwrap(), vec![0.5]);
        assert!(sin_ratio(&tr, &[Tensor::vector(vec![0.1])]).is_err());
    }
}
