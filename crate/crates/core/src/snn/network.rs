//! Lowering of a normalized graph into spiking stages.
//!
//! Each weighted layer, together with any flatten/average-pool layers around
//! it, becomes one linear chain. A chain followed by ReLU drives a layer of IF
//! neurons; the last chain is the readout. Max-pooling layers after a spiking
//! layer become pooling stages.

use crate::error::{Error, Result};
use crate::mlipool::{build_blocks, BlockMap};
use crate::model::{Conv2d, Dense, Layer, PoolGeometry};
use crate::normalize::NormalizedGraph;

use super::config::{ConversionConfig, PoolMode, ReadoutMode};

#[derive(Clone, Debug)]
pub(crate) enum ChainOp {
    Relu,
    Flatten,
    AvgPool {
        geometry: PoolGeometry,
        in_shape: Vec<usize>,
    },
    Dense {
        /// Input-major copy of the weight, `[in][out]`.
        weight_t: Vec<f64>,
        bias: Vec<f64>,
        inputs: usize,
        outputs: usize,
    },
    Conv {
        conv: Conv2d,
        in_shape: Vec<usize>,
        out_shape: Vec<usize>,
    },
}

/// Linear map from a stage's input to the currents of its neurons.
#[derive(Clone, Debug)]
pub struct LinearChain {
    pub(crate) ops: Vec<ChainOp>,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    /// Graph index of the chain's weighted layer.
    pub weighted_layer: usize,
    /// Graph index of the chain's last layer (pre-activation output).
    pub last_layer: usize,
}

impl LinearChain {
    pub fn in_len(&self) -> usize {
        self.in_shape.iter().product()
    }

    pub fn out_len(&self) -> usize {
        self.out_shape.iter().product()
    }

    /// Applies the chain to `input`; biases are added when `with_bias`.
    pub fn apply(&self, input: &[f64], with_bias: bool) -> Vec<f64> {
        let mut cur = input.to_vec();
        for op in &self.ops {
            cur = match op {
                ChainOp::Relu => cur.into_iter().map(|v| v.max(0.0)).collect(),
                ChainOp::Flatten => cur,
                ChainOp::AvgPool { geometry, in_shape } => crate::model::pool_forward(
                    *geometry,
                    in_shape,
                    &cur,
                    crate::model::PoolOp::Avg,
                ),
                ChainOp::Dense {
                    weight_t,
                    bias,
                    inputs,
                    outputs,
                } => {
                    let mut out = if with_bias { bias.clone() } else { vec![0.0; *outputs] };
                    for j in 0..*inputs {
                        let v = cur[j];
                        if v != 0.0 {
                            let col = &weight_t[j * outputs..(j + 1) * outputs];
                            for (o, w) in out.iter_mut().zip(col) {
                                *o += w * v;
                            }
                        }
                    }
                    out
                }
                ChainOp::Conv {
                    conv,
                    in_shape,
                    out_shape,
                } => conv_scatter(conv, in_shape, out_shape, &cur, with_bias),
            };
        }
        cur
    }

    /// Synapses reached by one spike at each chain input, counting every
    /// weight of the chain's weighted layer that the input feeds, through
    /// any average pooling in front of it.
    pub fn fan_out(&self) -> Vec<f64> {
        let widx = self
            .ops
            .iter()
            .position(|op| matches!(op, ChainOp::Dense { .. } | ChainOp::Conv { .. }))
            .expect("chain has a weighted op");
        let mut fan = match &self.ops[widx] {
            ChainOp::Dense {
                inputs, outputs, ..
            } => vec![*outputs as f64; *inputs],
            ChainOp::Conv {
                conv,
                in_shape,
                out_shape,
            } => conv_fan_out(conv, in_shape, out_shape),
            _ => unreachable!(),
        };
        for op in self.ops[..widx].iter().rev() {
            if let ChainOp::AvgPool { geometry, in_shape } = op {
                let r = in_shape.len();
                let (h, w) = (in_shape[r - 2], in_shape[r - 1]);
                let oh = geometry.output_extent(h).unwrap();
                let ow = geometry.output_extent(w).unwrap();
                let channels = in_shape[..r - 2].iter().product::<usize>();
                let mut prev = vec![0.0; channels * h * w];
                for c in 0..channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let f = fan[(c * oh + oy) * ow + ox];
                            for iy in geometry.window(oy, h) {
                                for ix in geometry.window(ox, w) {
                                    prev[(c * h + iy) * w + ix] += f;
                                }
                            }
                        }
                    }
                }
                fan = prev;
            }
        }
        fan
    }

    /// Multiply-accumulates of the weighted layer in a dense ANN evaluation.
    pub fn macs(&self) -> f64 {
        self.ops
            .iter()
            .find_map(|op| match op {
                ChainOp::Dense {
                    inputs, outputs, ..
                } => Some((*inputs * *outputs) as f64),
                ChainOp::Conv {
                    conv,
                    in_shape,
                    out_shape,
                } => Some(conv_fan_out(conv, in_shape, out_shape).iter().sum()),
                _ => None,
            })
            .unwrap_or(0.0)
    }
}

fn conv_scatter(
    conv: &Conv2d,
    in_shape: &[usize],
    out_shape: &[usize],
    x: &[f64],
    with_bias: bool,
) -> Vec<f64> {
    let (ic, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oc, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let (kh, kw) = conv.kernel();
    let (s, pad) = (conv.stride as isize, conv.padding as isize);
    let wt = conv.weight.data();
    let mut out = vec![0.0; oc * oh * ow];
    if with_bias {
        if let Some(b) = &conv.bias {
            for o in 0..oc {
                out[o * oh * ow..(o + 1) * oh * ow].fill(b.data()[o]);
            }
        }
    }
    for i in 0..ic {
        for iy in 0..h {
            for ix in 0..w {
                let v = x[(i * h + iy) * w + ix];
                if v == 0.0 {
                    continue;
                }
                for ky in 0..kh {
                    let ny = iy as isize + pad - ky as isize;
                    if ny < 0 || ny % s != 0 || ny / s >= oh as isize {
                        continue;
                    }
                    let oy = (ny / s) as usize;
                    for kx in 0..kw {
                        let nx = ix as isize + pad - kx as isize;
                        if nx < 0 || nx % s != 0 || nx / s >= ow as isize {
                            continue;
                        }
                        let ox = (nx / s) as usize;
                        for o in 0..oc {
                            out[(o * oh + oy) * ow + ox] += wt[((o * ic + i) * kh + ky) * kw + kx] * v;
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_fan_out(conv: &Conv2d, in_shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    let (ic, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oc, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let (kh, kw) = conv.kernel();
    let (s, pad) = (conv.stride as isize, conv.padding as isize);
    let mut fan = vec![0.0; ic * h * w];
    for iy in 0..h {
        for ix in 0..w {
            let mut taps = 0usize;
            for ky in 0..kh {
                let ny = iy as isize + pad - ky as isize;
                if ny < 0 || ny % s != 0 || ny / s >= oh as isize {
                    continue;
                }
                for kx in 0..kw {
                    let nx = ix as isize + pad - kx as isize;
                    if nx >= 0 && nx % s == 0 && nx / s < ow as isize {
                        taps += 1;
                    }
                }
            }
            for i in 0..ic {
                fan[(i * h + iy) * w + ix] = (taps * oc) as f64;
            }
        }
    }
    fan
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Mlip,
    NaiveMax,
}

#[derive(Clone, Debug)]
pub enum Stage {
    /// IF neurons driven by a linear chain.
    Spiking {
        chain: LinearChain,
        /// Graph index of the ReLU the neurons stand in for.
        relu_layer: usize,
    },
    /// Spiking max pooling over the previous stage's output.
    Pool {
        kind: PoolKind,
        map: BlockMap,
        layer: usize,
    },
    /// Output layer.
    Readout {
        chain: LinearChain,
        spiking: bool,
        /// Graph index whose ANN output the readout reproduces.
        output_layer: usize,
        trailing_relu: bool,
    },
}

impl Stage {
    pub fn out_shape(&self) -> &[usize] {
        match self {
            Stage::Spiking { chain, .. } | Stage::Readout { chain, .. } => &chain.out_shape,
            Stage::Pool { map, .. } => &map.out_shape,
        }
    }

    pub fn out_len(&self) -> usize {
        self.out_shape().iter().product()
    }
}

/// A normalized graph lowered into executable spiking stages.
#[derive(Clone, Debug)]
pub struct SpikingNetwork {
    pub stages: Vec<Stage>,
    pub input_shape: Vec<usize>,
}

impl SpikingNetwork {
    pub fn compile(net: &NormalizedGraph, cfg: &ConversionConfig) -> Result<Self> {
        let g = &net.graph;
        let layers = g.layers();
        let weighted = g.weighted_layers();
        let Some(&last_weighted) = weighted.last() else {
            return Err(Error::InvalidConfig("network has no weighted layer".into()));
        };
        let unsupported = |layer: usize, reason: &str| Error::InvalidLayer {
            layer,
            reason: reason.to_string(),
        };

        let mut stages: Vec<Stage> = Vec::new();
        let mut pre: Vec<ChainOp> = Vec::new();
        let mut pre_start_shape = g.input_shape().to_vec();
        let mut i = 0;
        while i < layers.len() {
            let in_shape = g.input_shape_of(i).to_vec();
            match &layers[i] {
                Layer::Flatten => {
                    if pre.is_empty() {
                        pre_start_shape = in_shape;
                    }
                    pre.push(ChainOp::Flatten);
                    i += 1;
                }
                Layer::AvgPool2d(geometry) => {
                    if pre.is_empty() {
                        pre_start_shape = in_shape.clone();
                    }
                    pre.push(ChainOp::AvgPool {
                        geometry: *geometry,
                        in_shape,
                    });
                    i += 1;
                }
                Layer::Relu => {
                    if stages.is_empty() {
                        if pre.is_empty() {
                            pre_start_shape = in_shape;
                        }
                        pre.push(ChainOp::Relu);
                    }
                    // after a spiking stage inputs are spike counts; ReLU is the identity
                    i += 1;
                }
                Layer::MaxPool2d(geometry) => {
                    if stages.is_empty() {
                        return Err(unsupported(i, "max pooling before the first weighted layer"));
                    }
                    if cfg.pool == PoolMode::Avg {
                        if pre.is_empty() {
                            pre_start_shape = in_shape.clone();
                        }
                        pre.push(ChainOp::AvgPool {
                            geometry: *geometry,
                            in_shape,
                        });
                    } else {
                        if !pre.is_empty() {
                            return Err(unsupported(i, "max pooling must directly follow a spiking layer"));
                        }
                        let map = build_blocks(
                            &in_shape,
                            geometry.kernel,
                            geometry.stride,
                            geometry.ceil_mode,
                        )?;
                        let kind = if cfg.pool == PoolMode::Mlip {
                            PoolKind::Mlip
                        } else {
                            PoolKind::NaiveMax
                        };
                        stages.push(Stage::Pool { kind, map, layer: i });
                    }
                    i += 1;
                }
                Layer::Dense(_) | Layer::Conv2d(_) => {
                    let chain_in = if pre.is_empty() { in_shape.clone() } else { pre_start_shape.clone() };
                    let mut ops = std::mem::take(&mut pre);
                    ops.push(weighted_op(&layers[i], &in_shape, g.shape_of(i)));
                    let widx = i;
                    i += 1;
                    // trailing linear ops up to the activation
                    while i < layers.len() {
                        match &layers[i] {
                            Layer::Flatten => ops.push(ChainOp::Flatten),
                            Layer::AvgPool2d(geometry) => ops.push(ChainOp::AvgPool {
                                geometry: *geometry,
                                in_shape: g.input_shape_of(i).to_vec(),
                            }),
                            _ => break,
                        }
                        i += 1;
                    }
                    let chain = LinearChain {
                        ops,
                        in_shape: chain_in,
                        out_shape: g.shape_of(i - 1).to_vec(),
                        weighted_layer: widx,
                        last_layer: i - 1,
                    };
                    let followed_by_relu = matches!(layers.get(i), Some(Layer::Relu));
                    if widx == last_weighted {
                        let mut trailing_relu = false;
                        let mut out_layer = i - 1;
                        while i < layers.len() {
                            match &layers[i] {
                                Layer::Relu => trailing_relu = true,
                                Layer::Flatten => {}
                                _ => return Err(unsupported(i, "only ReLU/flatten may follow the output layer")),
                            }
                            out_layer = i;
                            i += 1;
                        }
                        let mut chain = chain;
                        // flatten after the output layer only renames the shape
                        chain.out_shape = g.shape_of(out_layer).to_vec();
                        stages.push(Stage::Readout {
                            chain,
                            spiking: cfg.readout == ReadoutMode::Spiking,
                            output_layer: out_layer,
                            trailing_relu,
                        });
                    } else {
                        if !followed_by_relu {
                            return Err(unsupported(widx, "hidden weighted layers must be followed by ReLU"));
                        }
                        stages.push(Stage::Spiking { chain, relu_layer: i });
                        i += 1;
                    }
                }
            }
        }
        Ok(Self {
            stages,
            input_shape: g.input_shape().to_vec(),
        })
    }

    pub fn readout(&self) -> &Stage {
        self.stages.last().expect("compiled network has a readout")
    }
}

fn weighted_op(layer: &Layer, in_shape: &[usize], out_shape: &[usize]) -> ChainOp {
    match layer {
        Layer::Dense(Dense { weight, bias }) => {
            let (outputs, inputs) = (weight.shape()[0], weight.shape()[1]);
            let w = weight.data();
            let mut weight_t = vec![0.0; inputs * outputs];
            for o in 0..outputs {
                for j in 0..inputs {
                    weight_t[j * outputs + o] = w[o * inputs + j];
                }
            }
            ChainOp::Dense {
                weight_t,
                bias: bias.as_ref().map_or(vec![0.0; outputs], |b| b.data().to_vec()),
                inputs,
                outputs,
            }
        }
        Layer::Conv2d(conv) => ChainOp::Conv {
            conv: conv.clone(),
            in_shape: in_shape.to_vec(),
            out_shape: out_shape.to_vec(),
        },
        _ => unreachable!("weighted_op on a parameter-free layer"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NetworkGraph, PoolGeometry};
    use crate::tensor::Tensor;

    fn cnn() -> NetworkGraph {
        let conv = |oc, ic, seed: usize| {
            Layer::Conv2d(Conv2d {
                weight: Tensor::new(
                    vec![oc, ic, 3, 3],
                    (0..oc * ic * 9).map(|i| (((i + seed) * 37 % 17) as f64 - 8.0) / 20.0).collect(),
                )
                .unwrap(),
                bias: Some(Tensor::vector(vec![0.05; oc])),
                stride: 1,
                padding: 1,
            })
        };
        NetworkGraph::new(
            vec![1, 6, 6],
            vec![
                conv(2, 1, 0),
                Layer::Relu,
                Layer::MaxPool2d(PoolGeometry::new(2, 2, false).unwrap()),
                conv(3, 2, 5),
                Layer::Relu,
                Layer::AvgPool2d(PoolGeometry::new(3, 3, false).unwrap()),
                Layer::Flatten,
                Layer::Dense(Dense {
                    weight: Tensor::new(vec![2, 3], vec![0.5, -0.2, 0.1, 0.3, 0.3, -0.4]).unwrap(),
                    bias: None,
                }),
            ],
        )
        .unwrap()
    }

    #[test]
    fn lowers_cnn_into_stages() {
        let net = NormalizedGraph::identity(cnn(), 1.0);
        let snn = SpikingNetwork::compile(&net, &ConversionConfig::default()).unwrap();
        let kinds: Vec<&str> = snn
            .stages
            .iter()
            .map(|s| match s {
                Stage::Spiking { .. } => "spike",
                Stage::Pool { .. } => "pool",
                Stage::Readout { .. } => "readout",
            })
            .collect();
        assert_eq!(kinds, ["spike", "pool", "spike", "readout"]);
        assert_eq!(snn.readout().out_shape(), &[2]);
    }

    #[test]
    fn avg_mode_folds_max_pool_into_next_chain() {
        let net = NormalizedGraph::identity(cnn(), 1.0);
        let cfg = ConversionConfig {
            pool: PoolMode::Avg,
            ..Default::default()
        };
        let snn = SpikingNetwork::compile(&net, &cfg).unwrap();
        assert_eq!(snn.stages.len(), 3);
    }

    #[test]
    fn chains_match_ann_linear_layers() {
        let g = cnn();
        let net = NormalizedGraph::identity(g.clone(), 1.0);
        let snn = SpikingNetwork::compile(&net, &ConversionConfig::default()).unwrap();
        let x = Tensor::new(vec![1, 6, 6], (0..36).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        let outs = g.forward(&x).unwrap();
        for stage in &snn.stages {
            let chain = match stage {
                Stage::Spiking { chain, .. } | Stage::Readout { chain, .. } => chain,
                Stage::Pool { .. } => continue,
            };
            let input = if chain.weighted_layer == 0 {
                x.data().to_vec()
            } else {
                // first op of a later chain consumes the output before it
                let start = chain.weighted_layer
                    - chain.ops.iter().take_while(|o| !matches!(o, ChainOp::Dense { .. } | ChainOp::Conv { .. })).count();
                outs[start - 1].data().to_vec()
            };
            let got = chain.apply(&input, true);
            let want = outs[chain.last_layer].data();
            for (a, b) in got.iter().zip(want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_fan_out_sums_to_macs() {
        let net = NormalizedGraph::identity(cnn(), 1.0);
        let snn = SpikingNetwork::compile(&net, &ConversionConfig::default()).unwrap();
        let Stage::Spiking { chain, .. } = &snn.stages[0] else { panic!() };
        let fan = chain.fan_out();
        // interior pixel of a 3x3 same conv reaches 9 taps in each of 2 channels
        assert_eq!(fan[6 + 1], 18.0);
        // corner reaches 4 taps
        assert_eq!(fan[0], 8.0);
        assert_eq!(fan.iter().sum::<f64>(), chain.macs());
    }

    #[test]
    fn hidden_layer_without_relu_is_rejected() {
        let d = |o, i| Layer::Dense(Dense { weight: Tensor::new(vec![o, i], vec![0.1; o * i]).unwrap(), bias: None });
        let g = NetworkGraph::new(vec![3], vec![d(2, 3), d(1, 2)]).unwrap();
        let err = SpikingNetwork::compile(&NormalizedGraph::identity(g, 1.0), &ConversionConfig::default());
        assert!(err.is_err());
    }
}
