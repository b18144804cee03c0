#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snnconv::model::{Conv2d, Dense, Layer, PoolGeometry};
use snnconv::normalize::NormalizedGraph;
use snnconv::{NetworkGraph, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dense(out: usize, inp: usize, w: &[f64], b: Option<&[f64]>) -> Layer {
    Layer::Dense(Dense {
        weight: Tensor::new(vec![out, inp], w.to_vec()).unwrap(),
        bias: b.map(|b| Tensor::vector(b.to_vec())),
    })
}

pub fn random_dense(r: &mut ChaCha8Rng, inp: usize, out: usize) -> Layer {
    let a = (6.0 / inp as f64).sqrt();
    let w: Vec<f64> = (0..out * inp).map(|_| r.random_range(-a..a)).collect();
    let b: Vec<f64> = (0..out).map(|_| r.random_range(-0.1..0.1)).collect();
    dense(out, inp, &w, Some(&b))
}

pub fn random_conv(r: &mut ChaCha8Rng, ic: usize, oc: usize, k: usize, stride: usize, pad: usize) -> Layer {
    let a = (6.0 / (ic * k * k) as f64).sqrt();
    Layer::Conv2d(Conv2d {
        weight: Tensor::new(vec![oc, ic, k, k], (0..oc * ic * k * k).map(|_| r.random_range(-a..a)).collect()).unwrap(),
        bias: Some(Tensor::vector((0..oc).map(|_| r.random_range(-0.1..0.1)).collect())),
        stride,
        padding: pad,
    })
}

/// MLP with ReLU between `dims.len() - 1` dense layers.
pub fn mlp(r: &mut ChaCha8Rng, dims: &[usize]) -> NetworkGraph {
    let mut layers = Vec::new();
    for i in 0..dims.len() - 1 {
        layers.push(random_dense(r, dims[i], dims[i + 1]));
        if i + 2 < dims.len() {
            layers.push(Layer::Relu);
        }
    }
    NetworkGraph::new(vec![dims[0]], layers).unwrap()
}

/// conv-relu-maxpool-conv-relu-flatten-dense on `[1, 8, 8]`.
pub fn small_cnn(r: &mut ChaCha8Rng) -> NetworkGraph {
    NetworkGraph::new(
        vec![1, 8, 8],
        vec![
            random_conv(r, 1, 3, 3, 1, 1),
            Layer::Relu,
            Layer::MaxPool2d(PoolGeometry::new(2, 2, false).unwrap()),
            random_conv(r, 3, 4, 3, 1, 1),
            Layer::Relu,
            Layer::Flatten,
            random_dense(r, 64, 5),
        ],
    )
    .unwrap()
}

pub fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

/// One spiking layer of `currents.len()` neurons, each driven by a constant
/// current, feeding a throwaway readout.
pub fn constant_drive(currents: &[f64]) -> NormalizedGraph {
    let n = currents.len();
    let net = NetworkGraph::new(
        vec![1],
        vec![dense(n, 1, currents, None), Layer::Relu, dense(1, n, &vec![1.0; n], None)],
    )
    .unwrap();
    NormalizedGraph::identity(net, 1.0)
}

/// Two encoding neurons at rates `1` and `1/2` drive hidden neurons with
/// weights `(a, -b)`; `b > 2a` makes the ANN activation negative although the
/// first step's current `a` is positive.
pub fn sin_graph(pairs: &[(f64, f64)], readout: &[f64], bias: &[f64]) -> NormalizedGraph {
    let h = pairs.len();
    let out = bias.len();
    let w: Vec<f64> = pairs.iter().flat_map(|&(a, b)| [a, -b]).collect();
    let net = NetworkGraph::new(
        vec![1],
        vec![
            dense(2, 1, &[1.0, 0.5], None),
            Layer::Relu,
            dense(h, 2, &w, None),
            Layer::Relu,
            dense(out, h, readout, Some(bias)),
        ],
    )
    .unwrap();
    NormalizedGraph::identity(net, 1.0)
}
