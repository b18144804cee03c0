#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snnconv::io::{save_model, save_tensor, stack_samples};
use snnconv::model::{Conv2d, Dense, Layer, PoolGeometry};
use snnconv::{NetworkGraph, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn he(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let a = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-a..a)).collect()
}

pub fn dense(rng: &mut ChaCha8Rng, inp: usize, out: usize) -> Layer {
    Layer::Dense(Dense {
        weight: Tensor::new(vec![out, inp], he(rng, out * inp, inp)).unwrap(),
        bias: Some(Tensor::vector((0..out).map(|_| rng.random_range(-0.05..0.05)).collect())),
    })
}

pub fn conv(rng: &mut ChaCha8Rng, ic: usize, oc: usize, k: usize, pad: usize) -> Layer {
    Layer::Conv2d(Conv2d {
        weight: Tensor::new(vec![oc, ic, k, k], he(rng, oc * ic * k * k, ic * k * k)).unwrap(),
        bias: Some(Tensor::vector((0..oc).map(|_| rng.random_range(-0.05..0.05)).collect())),
        stride: 1,
        padding: pad,
    })
}

pub fn maxpool(k: usize, s: usize) -> Layer {
    Layer::MaxPool2d(PoolGeometry::new(k, s, false).unwrap())
}

/// conv-relu-pool twice, then a dense classifier over 16x16 single-channel input.
pub fn tiny_cnn(seed: u64) -> NetworkGraph {
    let mut r = rng(seed);
    let layers = vec![
        conv(&mut r, 1, 4, 3, 1),
        Layer::Relu,
        maxpool(2, 2),
        conv(&mut r, 4, 8, 3, 1),
        Layer::Relu,
        maxpool(2, 2),
        Layer::Flatten,
        dense(&mut r, 8 * 4 * 4, 10),
    ];
    NetworkGraph::new(vec![1, 16, 16], layers).unwrap()
}

/// Images made of a few bright rectangles on a dark background.
pub fn images(n: usize, seed: u64) -> Vec<Tensor> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let mut px = vec![0.0; 256];
            for _ in 0..r.random_range(2..5) {
                let (y0, x0) = (r.random_range(0..12), r.random_range(0..12));
                let (h, w) = (r.random_range(2..6), r.random_range(2..6));
                let level = r.random_range(0.3..1.0);
                for y in y0..(y0 + h).min(16) {
                    for x in x0..(x0 + w).min(16) {
                        px[y * 16 + x] = f64::max(px[y * 16 + x], level);
                    }
                }
            }
            for v in px.iter_mut() {
                *v += r.random_range(0.0..0.05);
            }
            Tensor::new(vec![1, 16, 16], px).unwrap()
        })
        .collect()
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub model: PathBuf,
    pub data: PathBuf,
    pub labels: PathBuf,
    pub net: NetworkGraph,
    pub samples: Vec<Tensor>,
}

/// Writes the tiny CNN, `n` images and ANN-argmax labels into a temp dir.
pub fn fixture(n: usize, seed: u64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let net = tiny_cnn(seed);
    let samples = images(n, seed + 1);
    let model = dir.path().join("model.json");
    save_model(&net, &model, None).unwrap();
    let data = dir.path().join("data.bin");
    save_tensor(&stack_samples(&samples).unwrap(), &data).unwrap();
    let labels = dir.path().join("labels.bin");
    let lab: Vec<f64> = samples
        .iter()
        .map(|x| net.predict(x).unwrap().argmax() as f64)
        .collect();
    save_tensor(&Tensor::vector(lab), &labels).unwrap();
    Fixture {
        dir,
        model,
        data,
        labels,
        net,
        samples,
    }
}

pub fn snnconv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snnconv"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
