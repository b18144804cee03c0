//! On-disk formats.
//!
//! A model is a JSON manifest listing layers plus a sidecar blob of
//! little-endian `f32` values; each weight or bias entry records its byte
//! offset into the blob and its shape. Sample files hold one tensor: a `u32`
//! rank, `rank` `u32` extents, then the `f32` values, all little endian.
//! A dataset is a single tensor whose leading axis indexes samples.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Conv2d, Dense, Layer, NetworkGraph, PoolGeometry};
use crate::tensor::Tensor;

pub const MODEL_FORMAT: &str = "snnconv-model";
pub const STATS_FORMAT: &str = "snnconv-stats";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobRef {
    /// Byte offset into the blob.
    pub offset: u64,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_features: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_features: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ceil_mode: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<BlobRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<BlobRef>,
    /// Producer indices; only `[i - 1]` (or `[]`/`[-1]` for the first layer)
    /// is accepted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<i64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationEntry {
    pub p: f64,
    /// One scale per weighted layer, in layer order.
    pub scales: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub version: u32,
    pub input_shape: Vec<usize>,
    /// Blob path relative to the manifest's directory.
    pub blob: String,
    pub layers: Vec<LayerEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormalizationEntry>,
}

fn f32_bytes(values: &[f64], out: &mut Vec<u8>) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn read_f32s(bytes: &[u8], offset: usize, count: usize) -> Result<Vec<f64>> {
    let end = offset
        .checked_add(count * 4)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| {
            Error::Format(format!(
                "blob range {offset}..+{} exceeds blob length {}",
                count * 4,
                bytes.len()
            ))
        })?;
    Ok(bytes[offset..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn blob_path(manifest_path: &Path, blob: &str) -> PathBuf {
    manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(blob)
}

/// Serializes a graph into a manifest plus blob bytes.
pub fn encode_model(
    net: &NetworkGraph,
    blob_name: &str,
    normalization: Option<NormalizationEntry>,
) -> (ModelManifest, Vec<u8>) {
    let mut blob = Vec::new();
    let push = |t: &Tensor, blob: &mut Vec<u8>| {
        let r = BlobRef {
            offset: blob.len() as u64,
            shape: t.shape().to_vec(),
        };
        f32_bytes(t.data(), blob);
        r
    };
    let mut layers = Vec::with_capacity(net.layers().len());
    for layer in net.layers() {
        let mut e = LayerEntry {
            kind: layer.kind().to_string(),
            ..Default::default()
        };
        match layer {
            Layer::Dense(d) => {
                e.in_features = Some(d.in_features());
                e.out_features = Some(d.out_features());
                e.weight = Some(push(&d.weight, &mut blob));
                e.bias = d.bias.as_ref().map(|b| push(b, &mut blob));
            }
            Layer::Conv2d(c) => {
                e.in_channels = Some(c.in_channels());
                e.out_channels = Some(c.out_channels());
                e.kernel = Some(c.kernel().0);
                e.stride = Some(c.stride);
                e.padding = Some(c.padding);
                e.weight = Some(push(&c.weight, &mut blob));
                e.bias = c.bias.as_ref().map(|b| push(b, &mut blob));
            }
            Layer::MaxPool2d(g) | Layer::AvgPool2d(g) => {
                e.kernel = Some(g.kernel);
                e.stride = Some(g.stride);
                e.ceil_mode = Some(g.ceil_mode);
            }
            Layer::Relu | Layer::Flatten => {}
        }
        layers.push(e);
    }
    let manifest = ModelManifest {
        format: MODEL_FORMAT.to_string(),
        version: FORMAT_VERSION,
        input_shape: net.input_shape().to_vec(),
        blob: blob_name.to_string(),
        layers,
        normalization,
    };
    (manifest, blob)
}

fn blob_tensor(blob: &[u8], r: &BlobRef, layer: usize) -> Result<Tensor> {
    let n: usize = r.shape.iter().product();
    let data = read_f32s(blob, r.offset as usize, n)?;
    Tensor::new(r.shape.clone(), data).map_err(|e| Error::InvalidLayer {
        layer,
        reason: e.to_string(),
    })
}

/// Rebuilds a graph from a manifest and its blob.
pub fn decode_model(manifest: &ModelManifest, blob: &[u8]) -> Result<NetworkGraph> {
    if manifest.format != MODEL_FORMAT {
        return Err(Error::Format(format!(
            "expected format {MODEL_FORMAT:?}, got {:?}",
            manifest.format
        )));
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, e) in manifest.layers.iter().enumerate() {
        if let Some(inputs) = &e.inputs {
            let sequential = match inputs.as_slice() {
                [] => true,
                [p] => *p == i as i64 - 1,
                _ => false,
            };
            if !sequential {
                return Err(Error::Branching {
                    layer: i,
                    reason: format!("inputs {inputs:?}"),
                });
            }
        }
        let missing = |what: &str| Error::InvalidLayer {
            layer: i,
            reason: format!("{} layer is missing `{what}`", e.kind),
        };
        let layer = match e.kind.as_str() {
            "dense" => {
                let w = blob_tensor(blob, e.weight.as_ref().ok_or_else(|| missing("weight"))?, i)?;
                if let (Some(inf), Some(outf)) = (e.in_features, e.out_features) {
                    if w.shape() != [outf, inf] {
                        return Err(Error::InvalidLayer {
                            layer: i,
                            reason: format!("weight shape {:?} != [{outf}, {inf}]", w.shape()),
                        });
                    }
                }
                let bias = e.bias.as_ref().map(|b| blob_tensor(blob, b, i)).transpose()?;
                Layer::Dense(Dense { weight: w, bias })
            }
            "conv2d" => {
                let w = blob_tensor(blob, e.weight.as_ref().ok_or_else(|| missing("weight"))?, i)?;
                if let (Some(ic), Some(oc), Some(k)) = (e.in_channels, e.out_channels, e.kernel) {
                    if w.shape() != [oc, ic, k, k] {
                        return Err(Error::InvalidLayer {
                            layer: i,
                            reason: format!("weight shape {:?} != [{oc}, {ic}, {k}, {k}]", w.shape()),
                        });
                    }
                }
                let bias = e.bias.as_ref().map(|b| blob_tensor(blob, b, i)).transpose()?;
                Layer::Conv2d(Conv2d {
                    weight: w,
                    bias,
                    stride: e.stride.unwrap_or(1),
                    padding: e.padding.unwrap_or(0),
                })
            }
            "maxpool2d" | "avgpool2d" => {
                let k = e.kernel.ok_or_else(|| missing("kernel"))?;
                let g = PoolGeometry::new(k, e.stride.unwrap_or(k), e.ceil_mode.unwrap_or(false))
                    .map_err(|err| Error::InvalidLayer {
                        layer: i,
                        reason: err.to_string(),
                    })?;
                if e.kind == "maxpool2d" {
                    Layer::MaxPool2d(g)
                } else {
                    Layer::AvgPool2d(g)
                }
            }
            "relu" => Layer::Relu,
            "flatten" => Layer::Flatten,
            "add" | "concat" | "residual" | "shortcut" => {
                return Err(Error::Branching {
                    layer: i,
                    reason: format!("`{}` merges multiple inputs", e.kind),
                })
            }
            other => {
                return Err(Error::InvalidLayer {
                    layer: i,
                    reason: format!("unknown layer kind `{other}`"),
                })
            }
        };
        if e.ceil_mode.is_some() && !matches!(layer, Layer::MaxPool2d(_) | Layer::AvgPool2d(_)) {
            return Err(Error::InvalidLayer {
                layer: i,
                reason: "ceil_mode is only valid on pooling layers".into(),
            });
        }
        layers.push(layer);
    }
    NetworkGraph::new(manifest.input_shape.clone(), layers)
}

/// Writes `<dir>/<stem>.json` and `<dir>/<stem>.bin`.
pub fn save_model(
    net: &NetworkGraph,
    manifest_path: &Path,
    normalization: Option<NormalizationEntry>,
) -> Result<()> {
    let blob_name = manifest_path
        .with_extension("bin")
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| Error::Format(format!("bad manifest path {}", manifest_path.display())))?;
    let (manifest, blob) = encode_model(net, &blob_name, normalization);
    write_file(&blob_path(manifest_path, &blob_name), &blob)?;
    let json = serde_json::to_string_pretty(&manifest)?;
    write_file(manifest_path, json.as_bytes())
}

pub fn load_manifest(manifest_path: &Path) -> Result<ModelManifest> {
    let text = read_file(manifest_path)?;
    Ok(serde_json::from_slice(&text)?)
}

/// Loads a model and any normalization metadata it carries.
pub fn load_model(manifest_path: &Path) -> Result<(NetworkGraph, Option<NormalizationEntry>)> {
    let manifest = load_manifest(manifest_path)?;
    let blob = read_file(&blob_path(manifest_path, &manifest.blob))?;
    let net = decode_model(&manifest, &blob)?;
    Ok((net, manifest.normalization))
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    f32_bytes(t.data(), &mut out);
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let word = |i: usize| -> Result<usize> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .ok_or_else(|| Error::Format("truncated tensor header".into()))
    };
    let rank = word(0)?;
    if rank == 0 || rank > 8 {
        return Err(Error::Format(format!("unsupported tensor rank {rank}")));
    }
    let shape = (1..=rank).map(word).collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let header = 4 * (rank + 1);
    if bytes.len() != header + 4 * n {
        return Err(Error::Format(format!(
            "tensor {shape:?} needs {} data bytes, file has {}",
            4 * n,
            bytes.len() - header
        )));
    }
    Tensor::new(shape, read_f32s(bytes, header, n)?)
}

pub fn save_tensor(t: &Tensor, path: &Path) -> Result<()> {
    write_file(path, &encode_tensor(t))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    decode_tensor(&read_file(path)?)
}

/// Splits a `[N, ...]` tensor into N samples.
pub fn split_samples(batch: &Tensor) -> Result<Vec<Tensor>> {
    if batch.rank() < 2 {
        return Err(Error::Format(format!(
            "dataset tensor must have a leading sample axis, got shape {:?}",
            batch.shape()
        )));
    }
    let sample_shape = batch.shape()[1..].to_vec();
    let n: usize = sample_shape.iter().product();
    batch
        .data()
        .chunks_exact(n)
        .map(|c| Tensor::new(sample_shape.clone(), c.to_vec()))
        .collect()
}

/// Stacks equally shaped samples into one `[N, ...]` tensor.
pub fn stack_samples(samples: &[Tensor]) -> Result<Tensor> {
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let mut shape = vec![samples.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(samples.len() * first.len());
    for s in samples {
        if s.shape() != first.shape() {
            return Err(Error::Format("samples differ in shape".into()));
        }
        data.extend_from_slice(s.data());
    }
    Tensor::new(shape, data)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Tensor>> {
    split_samples(&load_tensor(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsLayerEntry {
    /// Index of the weighted layer in the graph.
    pub layer: usize,
    /// Values observed before reservoir subsampling.
    pub seen: u64,
    pub offset: u64,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsManifest {
    pub format: String,
    pub version: u32,
    pub blob: String,
    pub layers: Vec<StatsLayerEntry>,
}

pub(crate) fn encode_stats(
    layers: &[(usize, u64, &[f64])],
    blob_name: &str,
) -> (StatsManifest, Vec<u8>) {
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(layers.len());
    for &(layer, seen, values) in layers {
        entries.push(StatsLayerEntry {
            layer,
            seen,
            offset: blob.len() as u64,
            len: values.len(),
        });
        f32_bytes(values, &mut blob);
    }
    (
        StatsManifest {
            format: STATS_FORMAT.to_string(),
            version: FORMAT_VERSION,
            blob: blob_name.to_string(),
            layers: entries,
        },
        blob,
    )
}

pub(crate) fn save_stats_files(
    manifest_path: &Path,
    blob_name: &str,
    layers: &[(usize, u64, &[f64])],
) -> Result<()> {
    let (manifest, blob) = encode_stats(layers, blob_name);
    write_file(&blob_path(manifest_path, blob_name), &blob)?;
    write_file(manifest_path, serde_json::to_string_pretty(&manifest)?.as_bytes())
}

pub(crate) fn load_stats_files(manifest_path: &Path) -> Result<Vec<(usize, u64, Vec<f64>)>> {
    let manifest: StatsManifest = serde_json::from_slice(&read_file(manifest_path)?)?;
    if manifest.format != STATS_FORMAT {
        return Err(Error::Format(format!(
            "expected format {STATS_FORMAT:?}, got {:?}",
            manifest.format
        )));
    }
    let blob = read_file(&blob_path(manifest_path, &manifest.blob))?;
    manifest
        .layers
        .iter()
        .map(|e| Ok((e.layer, e.seen, read_f32s(&blob, e.offset as usize, e.len)?)))
        .collect()
}
