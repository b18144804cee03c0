//! Percentile-based weight normalization.
//!
//! Each weighted layer `l` gets a scale `max_p(l)`, the `p`-th percentile of
//! its rectified outputs over a calibration set. Weights become
//! `w * max_p(l-1) / max_p(l)` and biases `b / max_p(l)`, where `l-1` is the
//! previous weighted layer and the network input has scale 1.

use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io;
use crate::model::{Conv2d, Dense, Layer, NetworkGraph};
use crate::tensor::Tensor;

pub const DEFAULT_RESERVOIR_CAP: usize = 1 << 20;

/// Sorted sample of the rectified output of one weighted layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSample {
    /// Index of the weighted layer in the graph.
    pub layer: usize,
    /// Number of values offered, including those the reservoir dropped.
    pub seen: u64,
    values: Vec<f64>,
}

impl LayerSample {
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationStats {
    pub layers: Vec<LayerSample>,
}

/// Uniform fixed-size reservoir (Algorithm R).
#[derive(Clone, Debug)]
pub struct Reservoir {
    cap: usize,
    seen: u64,
    items: Vec<f64>,
}

impl Reservoir {
    pub fn new(cap: usize) -> Self {
        assert!(cap > 0, "reservoir cap must be positive");
        Self {
            cap,
            seen: 0,
            items: Vec::new(),
        }
    }

    pub fn offer(&mut self, v: f64, rng: &mut impl Rng) {
        self.seen += 1;
        if self.items.len() < self.cap {
            self.items.push(v);
        } else {
            let j = rng.random_range(0..self.seen);
            if (j as usize) < self.cap {
                self.items[j as usize] = v;
            }
        }
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn into_sorted(mut self) -> Vec<f64> {
        self.items.sort_by(f64::total_cmp);
        self.items
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StatsOptions {
    pub reservoir_cap: usize,
    pub seed: u64,
}

impl Default for StatsOptions {
    fn default() -> Self {
        Self {
            reservoir_cap: DEFAULT_RESERVOIR_CAP,
            seed: 0,
        }
    }
}

/// Pools the rectified outputs of every weighted layer over `dataset`.
pub fn collect_stats(net: &NetworkGraph, dataset: &[Tensor]) -> Result<ActivationStats> {
    collect_stats_with(net, dataset, StatsOptions::default())
}

pub fn collect_stats_with(
    net: &NetworkGraph,
    dataset: &[Tensor],
    opts: StatsOptions,
) -> Result<ActivationStats> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let weighted = net.weighted_layers();
    let mut reservoirs: Vec<Reservoir> = weighted
        .iter()
        .map(|_| Reservoir::new(opts.reservoir_cap))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for x in dataset {
        let outs = net.forward(x)?;
        for (res, &li) in reservoirs.iter_mut().zip(&weighted) {
            for &v in outs[li].data() {
                // f32 precision so a saved sample reloads bit-identically
                res.offer(v.max(0.0) as f32 as f64, &mut rng);
            }
        }
    }
    Ok(ActivationStats {
        layers: reservoirs
            .into_iter()
            .zip(weighted)
            .map(|(r, layer)| LayerSample {
                layer,
                seen: r.seen(),
                values: r.into_sorted(),
            })
            .collect(),
    })
}

impl ActivationStats {
    pub fn from_sorted(layers: Vec<(usize, u64, Vec<f64>)>) -> Result<Self> {
        let mut out = Vec::with_capacity(layers.len());
        for (layer, seen, values) in layers {
            if values.windows(2).any(|w| w[0] > w[1]) || values.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::Format(format!(
                    "stats for layer {layer} must be sorted and non-negative"
                )));
            }
            out.push(LayerSample { layer, seen, values });
        }
        Ok(Self { layers: out })
    }

    pub fn layer(&self, index: usize) -> Option<&LayerSample> {
        self.layers.iter().find(|l| l.layer == index)
    }

    /// Writes `<stem>.json` (manifest) and `<stem>.bin` (blob).
    pub fn save(&self, manifest_path: &Path) -> Result<()> {
        let blob = manifest_path
            .with_extension("bin")
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "stats.bin".into());
        let entries: Vec<(usize, u64, &[f64])> = self
            .layers
            .iter()
            .map(|l| (l.layer, l.seen, l.values.as_slice()))
            .collect();
        io::save_stats_files(manifest_path, &blob, &entries)
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        Self::from_sorted(io::load_stats_files(manifest_path)?)
    }
}

/// `values[min(floor(len * p), len - 1)]` on an ascending slice.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidPercentile(p));
    }
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let idx = ((values.len() as f64 * p).floor() as usize).min(values.len() - 1);
    Ok(values[idx])
}

/// A graph whose weights and biases have been rescaled layer by layer.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedGraph {
    pub graph: NetworkGraph,
    /// `max_p` of each weighted layer, in order.
    pub scales: Vec<f64>,
    pub p: f64,
}

impl NormalizedGraph {
    /// Treats `net` as already normalized with unit scales.
    pub fn identity(net: NetworkGraph, p: f64) -> Self {
        let n = net.weighted_layers().len();
        Self {
            graph: net,
            scales: vec![1.0; n],
            p,
        }
    }

    /// Scale in effect at the output of graph layer `i`: that of the most
    /// recent weighted layer at or before `i`, or 1 before the first one.
    pub fn scale_at(&self, i: usize) -> f64 {
        let weighted = self.graph.weighted_layers();
        weighted
            .iter()
            .zip(&self.scales)
            .take_while(|(&w, _)| w <= i)
            .last()
            .map_or(1.0, |(_, &s)| s)
    }
}

/// Computes `max_p` for each weighted layer; dead layers fall back to 1.
pub fn layer_scales(net: &NetworkGraph, stats: &ActivationStats, p: f64) -> Result<Vec<f64>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidPercentile(p));
    }
    net.weighted_layers()
        .into_iter()
        .map(|li| {
            let sample = stats.layer(li).ok_or_else(|| Error::InvalidLayer {
                layer: li,
                reason: "activation stats do not cover this layer".into(),
            })?;
            let values = sample.values();
            if values.last().is_none_or(|&v| v == 0.0) {
                warn!("layer {li}: all calibration activations are zero; using scale 1");
                return Ok(1.0);
            }
            let scale = percentile(values, p)?;
            if scale <= 0.0 {
                return Err(Error::DegenerateScale { layer: li, scale });
            }
            Ok(scale)
        })
        .collect()
}

pub fn apply_norm(net: &NetworkGraph, stats: &ActivationStats, p: f64) -> Result<NormalizedGraph> {
    let scales = layer_scales(net, stats, p)?;
    let mut norm = apply_scales(net, &scales)?;
    norm.p = p;
    Ok(norm)
}

/// Rescales `net` with explicit per-weighted-layer scales.
pub fn apply_scales(net: &NetworkGraph, scales: &[f64]) -> Result<NormalizedGraph> {
    let weighted = net.weighted_layers();
    if scales.len() != weighted.len() {
        return Err(Error::InvalidConfig(format!(
            "{} scales given for {} weighted layers",
            scales.len(),
            weighted.len()
        )));
    }
    for (&li, &s) in weighted.iter().zip(scales) {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::DegenerateScale { layer: li, scale: s });
        }
    }
    let mut prev = 1.0;
    let mut k = 0;
    let mut layers = Vec::with_capacity(net.layers().len());
    for layer in net.layers() {
        let scaled = match layer {
            Layer::Dense(d) => {
                let (wf, bf) = (prev / scales[k], scales[k]);
                prev = scales[k];
                k += 1;
                Layer::Dense(Dense {
                    weight: scale_tensor(&d.weight, wf),
                    bias: d.bias.as_ref().map(|b| scale_tensor_div(b, bf)),
                })
            }
            Layer::Conv2d(c) => {
                let (wf, bf) = (prev / scales[k], scales[k]);
                prev = scales[k];
                k += 1;
                Layer::Conv2d(Conv2d {
                    weight: scale_tensor(&c.weight, wf),
                    bias: c.bias.as_ref().map(|b| scale_tensor_div(b, bf)),
                    stride: c.stride,
                    padding: c.padding,
                })
            }
            other => other.clone(),
        };
        layers.push(scaled);
    }
    Ok(NormalizedGraph {
        graph: net.with_layers(layers)?,
        scales: scales.to_vec(),
        p: 1.0,
    })
}

fn scale_tensor(t: &Tensor, f: f64) -> Tensor {
    t.map(|v| v * f).expect("finite scale keeps tensor finite")
}

fn scale_tensor_div(t: &Tensor, d: f64) -> Tensor {
    t.map(|v| v / d).expect("positive scale keeps tensor finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense(out: usize, inp: usize, w: Vec<f64>, b: Option<Vec<f64>>) -> Layer {
        Layer::Dense(Dense {
            weight: Tensor::new(vec![out, inp], w).unwrap(),
            bias: b.map(Tensor::vector),
        })
    }

    #[test]
    fn percentile_index_rule() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.9).unwrap(), 10.0);
        assert_eq!(percentile(&v, 1.0).unwrap(), 10.0);
        assert_eq!(percentile(&[1., 2., 3.], 0.5).unwrap(), 2.0);
        assert!(matches!(percentile(&v, 0.0), Err(Error::InvalidPercentile(_))));
        assert!(matches!(percentile(&v, 1.01), Err(Error::InvalidPercentile(_))));
    }

    #[test]
    fn stats_pool_and_sort() {
        let net = NetworkGraph::new(vec![3], vec![dense(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.], None), Layer::Relu]).unwrap();
        let stats = collect_stats(&net, &[Tensor::vector(vec![0., 2., 1.])]).unwrap();
        assert_eq!(stats.layers[0].values(), &[0., 1., 2.]);

        let net = NetworkGraph::new(vec![1], vec![dense(1, 1, vec![1.], None)]).unwrap();
        let stats = collect_stats(&net, &[Tensor::vector(vec![1.]), Tensor::vector(vec![3.])]).unwrap();
        assert_eq!(stats.layers[0].values(), &[1., 3.]);
        assert_eq!(stats.layers[0].seen, 2);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let net = NetworkGraph::new(vec![1], vec![dense(1, 1, vec![1.], None)]).unwrap();
        assert!(matches!(collect_stats(&net, &[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn reservoir_is_uniform() {
        // cap 2 over [1, 2, 3]: each item is kept with probability 2/3
        let trials = 30_000;
        let mut kept = [0u32; 3];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..trials {
            let mut r = Reservoir::new(2);
            for v in [1.0, 2.0, 3.0] {
                r.offer(v, &mut rng);
            }
            let s = r.into_sorted();
            assert_eq!(s.len(), 2);
            for v in s {
                kept[v as usize - 1] += 1;
            }
        }
        for k in kept {
            let frac = k as f64 / trials as f64;
            assert!((frac - 2.0 / 3.0).abs() < 0.015, "{kept:?}");
        }
    }

    #[test]
    fn unit_scales_are_identity() {
        let net = NetworkGraph::new(vec![2], vec![dense(2, 2, vec![1., -2., 0.5, 3.], Some(vec![0.1, 0.2])), Layer::Relu]).unwrap();
        let norm = apply_scales(&net, &[1.0]).unwrap();
        assert_eq!(norm.graph, net);
    }

    #[test]
    fn single_layer_scaling() {
        let net = NetworkGraph::new(vec![1], vec![dense(1, 1, vec![2.], Some(vec![4.])), Layer::Relu]).unwrap();
        let norm = apply_scales(&net, &[4.0]).unwrap();
        let Layer::Dense(d) = &norm.graph.layers()[0] else { panic!() };
        assert_eq!(d.weight.data(), &[0.5]);
        assert_eq!(d.bias.as_ref().unwrap().data(), &[1.0]);
    }

    #[test]
    fn dead_layer_gets_unit_scale() {
        let net = NetworkGraph::new(vec![1], vec![dense(1, 1, vec![-1.], None), Layer::Relu]).unwrap();
        let stats = collect_stats(&net, &[Tensor::vector(vec![1.])]).unwrap();
        assert_eq!(layer_scales(&net, &stats, 0.99).unwrap(), vec![1.0]);
    }

    #[test]
    fn zero_percentile_on_live_layer_is_degenerate() {
        let net = NetworkGraph::new(vec![4], vec![dense(4, 4, vec![1., 0., 0., 0., 0., -1., 0., 0., 0., 0., -1., 0., 0., 0., 0., -1.], None)]).unwrap();
        let stats = collect_stats(&net, &[Tensor::vector(vec![1., 1., 1., 1.])]).unwrap();
        assert!(matches!(apply_norm(&net, &stats, 0.5), Err(Error::DegenerateScale { .. })));
    }

    #[test]
    fn stats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = NetworkGraph::new(vec![2], vec![dense(2, 2, vec![0.3, 0.7, -0.1, 1.1], None), Layer::Relu]).unwrap();
        let data: Vec<Tensor> = (0..5).map(|i| Tensor::vector(vec![i as f64 * 0.37, 1.0 - i as f64 * 0.11])).collect();
        let stats = collect_stats(&net, &data).unwrap();
        let path = dir.path().join("stats.json");
        stats.save(&path).unwrap();
        assert!(dir.path().join("stats.bin").exists());
        assert_eq!(ActivationStats::load(&path).unwrap(), stats);
    }

    #[test]
    fn scale_at_tracks_last_weighted_layer() {
        let net = NetworkGraph::new(vec![2], vec![
            Layer::Relu,
            dense(2, 2, vec![1.; 4], None),
            Layer::Relu,
            dense(1, 2, vec![1.; 2], None),
        ]).unwrap();
        let norm = apply_scales(&net, &[2.0, 5.0]).unwrap();
        assert_eq!(norm.scale_at(0), 1.0);
        assert_eq!(norm.scale_at(1), 2.0);
        assert_eq!(norm.scale_at(2), 2.0);
        assert_eq!(norm.scale_at(3), 5.0);
    }

    proptest! {
        #[test]
        fn percentile_is_monotone_in_p(
            mut v in prop::collection::vec(0.0f64..10.0, 1..50),
            a in 0.001f64..1.0,
            b in 0.001f64..1.0,
        ) {
            v.sort_by(f64::total_cmp);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(percentile(&v, lo).unwrap() <= percentile(&v, hi).unwrap());
        }

        #[test]
        fn scaled_forward_equals_original_over_scale(
            w1 in prop::collection::vec(-1.0f64..1.0, 12),
            b1 in prop::collection::vec(-0.5f64..0.5, 3),
            w2 in prop::collection::vec(-1.0f64..1.0, 6),
            x in prop::collection::vec(-1.0f64..1.0, 4),
            s1 in 0.05f64..20.0,
            s2 in 0.05f64..20.0,
        ) {
            let net = NetworkGraph::new(vec![4], vec![
                dense(3, 4, w1, Some(b1)),
                Layer::Relu,
                dense(2, 3, w2, None),
            ]).unwrap();
            let norm = apply_scales(&net, &[s1, s2]).unwrap();
            let x = Tensor::vector(x);
            let orig = net.forward(&x).unwrap();
            let scaled = norm.graph.forward(&x).unwrap();
            for (i, (o, s)) in orig.iter().zip(&scaled).enumerate() {
                let k = norm.scale_at(i);
                for (a, b) in o.data().iter().zip(s.data()) {
                    prop_assert!((a / k - b).abs() <= 1e-9 * (1.0 + (a / k).abs()));
                }
            }
        }
    }
}
