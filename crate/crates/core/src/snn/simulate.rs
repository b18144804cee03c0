use crate::error::{Error, Result};
use crate::mlipool::{NaiveMaxPool, PoolBlockState};
use crate::normalize::NormalizedGraph;
use crate::spicalib::LayerCalibrator;
use crate::tensor::Tensor;

use super::config::{BiasMode, ConversionConfig};
use super::network::{LinearChain, PoolKind, SpikingNetwork, Stage};
use super::neuron::NeuronLayerState;
use super::trace::{SimulationTrace, TraceKind, TraceLayer};

enum Runtime {
    Neurons {
        state: NeuronLayerState,
        calib: Option<LayerCalibrator>,
    },
    Mlip(PoolBlockState),
    Naive(NaiveMaxPool),
    Accumulate,
}

/// Simulates `net` on one input for `cfg.timesteps` steps.
pub fn simulate(net: &NormalizedGraph, x: &Tensor, cfg: &ConversionConfig) -> Result<SimulationTrace> {
    cfg.validate()?;
    let snn = SpikingNetwork::compile(net, cfg)?;
    simulate_compiled(&snn, x, cfg)
}

/// As [`simulate`] on an already lowered network.
pub fn simulate_compiled(snn: &SpikingNetwork, x: &Tensor, cfg: &ConversionConfig) -> Result<SimulationTrace> {
    if x.shape() != snn.input_shape.as_slice() {
        return Err(Error::ShapeMismatch {
            layer: 0,
            expected: snn.input_shape.clone(),
            got: x.shape().to_vec(),
        });
    }
    let t_max = cfg.timesteps;
    let with_bias = cfg.bias == BiasMode::Constant;
    let fan_outs = fan_outs(snn);

    let mut runtimes = Vec::with_capacity(snn.stages.len());
    let mut layers = Vec::with_capacity(snn.stages.len());
    for (stage, fan_out) in snn.stages.iter().zip(fan_outs) {
        let n = stage.out_len();
        let (kind, ann_layer, pre_layer, rt) = match stage {
            Stage::Spiking { chain, relu_layer } => (
                TraceKind::Spiking,
                *relu_layer,
                Some(chain.last_layer),
                Runtime::Neurons {
                    state: NeuronLayerState::new(n, cfg.theta, cfg.v0),
                    calib: cfg
                        .spicalib
                        .then(|| LayerCalibrator::new(n, cfg.beta(), cfg.gamma)),
                },
            ),
            Stage::Pool { kind, map, layer } => (
                TraceKind::Pool,
                *layer,
                None,
                match kind {
                    PoolKind::Mlip => Runtime::Mlip(PoolBlockState::new(map.clone())),
                    PoolKind::NaiveMax => Runtime::Naive(NaiveMaxPool::new(map.clone())),
                },
            ),
            Stage::Readout {
                chain,
                spiking,
                output_layer,
                ..
            } => {
                if *spiking {
                    (
                        TraceKind::SpikingReadout,
                        *output_layer,
                        Some(chain.last_layer),
                        Runtime::Neurons {
                            state: NeuronLayerState::new(n, cfg.theta, cfg.v0),
                            calib: None,
                        },
                    )
                } else {
                    (TraceKind::Readout, *output_layer, Some(chain.last_layer), Runtime::Accumulate)
                }
            }
        };
        let has_current = !matches!(kind, TraceKind::Pool);
        let has_spikes = kind != TraceKind::Readout;
        let has_neg = matches!(kind, TraceKind::Pool) || cfg.spicalib && kind == TraceKind::Spiking;
        layers.push(TraceLayer {
            kind,
            shape: stage.out_shape().to_vec(),
            ann_layer,
            pre_layer,
            currents: if has_current { Vec::with_capacity(n * t_max) } else { Vec::new() },
            spikes: if has_spikes { Vec::with_capacity(n * t_max) } else { Vec::new() },
            neg: if has_neg { Vec::with_capacity(n * t_max) } else { Vec::new() },
            final_v: Vec::new(),
            v0: cfg.v0,
            theta: cfg.theta,
            fan_out,
            flag_events: 0,
            rectify: matches!(stage, Stage::Readout { trailing_relu: true, .. }),
        });
        runtimes.push(rt);
    }

    // the encoding layer sees the same current on every step
    let first_chain = chain_of(&snn.stages[0]).expect("first stage is weighted");
    let encoded = first_chain.apply(x.data(), with_bias);

    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for t in 1..=t_max {
        let mut signal: Vec<f64> = Vec::new();
        for (si, (stage, rt)) in snn.stages.iter().zip(runtimes.iter_mut()).enumerate() {
            let record = &mut layers[si];
            let n = stage.out_len();
            pos.clear();
            pos.resize(n, 0u32);
            neg.clear();
            neg.resize(n, 0u32);
            let current = match chain_of(stage) {
                Some(_) if si == 0 => Some(encoded.clone()),
                Some(chain) => Some(chain.apply(&signal, with_bias)),
                None => None,
            };
            match rt {
                Runtime::Neurons { state, calib } => {
                    let current = current.expect("neurons have a chain");
                    state.step_into(&current, cfg.gamma, &mut pos, si, t)?;
                    if let Some(c) = calib {
                        c.step(t as u64, &pos, &mut neg);
                        record.neg.extend_from_slice(&neg);
                    }
                    record.currents.extend_from_slice(&current);
                    record.spikes.extend_from_slice(&pos);
                }
                Runtime::Accumulate => {
                    let current = current.expect("readout has a chain");
                    if current.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFiniteCurrent { layer: si, step: t });
                    }
                    record.currents.extend_from_slice(&current);
                    signal = current;
                    continue;
                }
                Runtime::Mlip(pool) => {
                    let input: Vec<i64> = signal.iter().map(|&v| v as i64).collect();
                    pool.pool_step(&input, &mut pos, &mut neg);
                    record.spikes.extend_from_slice(&pos);
                    record.neg.extend_from_slice(&neg);
                }
                Runtime::Naive(pool) => {
                    let input: Vec<i64> = signal.iter().map(|&v| v as i64).collect();
                    pool.pool_step(&input, &mut pos, &mut neg);
                    record.spikes.extend_from_slice(&pos);
                    record.neg.extend_from_slice(&neg);
                }
            }
            signal = pos
                .iter()
                .zip(&neg)
                .map(|(&p, &q)| p as f64 - q as f64)
                .collect();
        }
    }

    for (rt, record) in runtimes.iter().zip(layers.iter_mut()) {
        if let Runtime::Neurons { state, calib } = rt {
            record.final_v = state.v.clone();
            record.flag_events = calib.as_ref().map_or(0, |c| c.flag_events);
        }
    }
    Ok(SimulationTrace {
        timesteps: t_max,
        gamma: cfg.gamma,
        layers,
    })
}

fn chain_of(stage: &Stage) -> Option<&LinearChain> {
    match stage {
        Stage::Spiking { chain, .. } | Stage::Readout { chain, .. } => Some(chain),
        Stage::Pool { .. } => None,
    }
}

/// Structural fan-out of every stage's neurons into the next stage.
fn fan_outs(snn: &SpikingNetwork) -> Vec<Vec<f64>> {
    let stages = &snn.stages;
    (0..stages.len())
        .map(|i| match stages.get(i + 1) {
            None => vec![0.0; stages[i].out_len()],
            Some(Stage::Pool { map, .. }) => map.membership().iter().map(|&m| m as f64).collect(),
            Some(next) => chain_of(next).expect("weighted stage").fan_out(),
        })
        .collect()
}
