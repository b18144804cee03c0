//! Sequential ReLU network description and the reference ANN forward pass.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Kernel/stride geometry shared by max and average pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub ceil_mode: bool,
}

impl PoolGeometry {
    pub fn new(kernel: usize, stride: usize, ceil_mode: bool) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(Error::InvalidConfig(format!(
                "pool kernel and stride must be >= 1 (kernel {kernel}, stride {stride})"
            )));
        }
        Ok(Self {
            kernel,
            stride,
            ceil_mode,
        })
    }

    /// Number of windows along one spatial axis of extent `extent`.
    pub fn output_extent(&self, extent: usize) -> Result<usize, String> {
        let (k, s) = (self.kernel, self.stride);
        if k > extent {
            return Err(format!("pool kernel {k} exceeds input extent {extent}"));
        }
        let span = extent - k;
        let out = if self.ceil_mode {
            span.div_ceil(s) + 1
        } else {
            span / s + 1
        };
        if (out - 1) * s >= extent {
            return Err(format!(
                "last pool window starts at {} which lies fully outside extent {extent}",
                (out - 1) * s
            ));
        }
        Ok(out)
    }

    /// In-bounds index range covered by window `o` along one axis.
    pub fn window(&self, o: usize, extent: usize) -> std::ops::Range<usize> {
        let start = o * self.stride;
        start..(start + self.kernel).min(extent)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `[out_features, in_features]`
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Dense {
    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    /// `[out_channels, in_channels, kernel_h, kernel_w]`
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    fn out_extent(&self, extent: usize, k: usize) -> Option<usize> {
        let padded = extent + 2 * self.padding;
        (padded >= k).then(|| (padded - k) / self.stride + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Relu,
    MaxPool2d(PoolGeometry),
    AvgPool2d(PoolGeometry),
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2d(_) => "maxpool2d",
            Layer::AvgPool2d(_) => "avgpool2d",
            Layer::Flatten => "flatten",
        }
    }

    /// Dense and conv layers carry weights; everything else is parameter free.
    pub fn is_weighted(&self) -> bool {
        matches!(self, Layer::Dense(_) | Layer::Conv2d(_))
    }

    fn check(&self) -> Result<(), String> {
        match self {
            Layer::Dense(d) => {
                if d.weight.rank() != 2 {
                    return Err(format!("dense weight must be rank 2, got {:?}", d.weight.shape()));
                }
                check_bias(d.bias.as_ref(), d.out_features())
            }
            Layer::Conv2d(c) => {
                if c.weight.rank() != 4 {
                    return Err(format!("conv2d weight must be rank 4, got {:?}", c.weight.shape()));
                }
                if c.stride == 0 {
                    return Err("conv2d stride must be >= 1".into());
                }
                check_bias(c.bias.as_ref(), c.out_channels())
            }
            Layer::MaxPool2d(g) | Layer::AvgPool2d(g) => {
                if g.kernel == 0 || g.stride == 0 {
                    return Err("pool kernel and stride must be >= 1".into());
                }
                Ok(())
            }
            Layer::Relu | Layer::Flatten => Ok(()),
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        self.check()?;
        match self {
            Layer::Dense(d) => {
                if input != [d.in_features()] {
                    return Err(format!(
                        "dense expects input [{}], got {input:?}",
                        d.in_features()
                    ));
                }
                Ok(vec![d.out_features()])
            }
            Layer::Conv2d(c) => {
                let [ch, h, w] = *input else {
                    return Err(format!("conv2d expects [C, H, W] input, got {input:?}"));
                };
                if ch != c.in_channels() {
                    return Err(format!(
                        "conv2d expects {} input channels, got {ch}",
                        c.in_channels()
                    ));
                }
                let (kh, kw) = c.kernel();
                match (c.out_extent(h, kh), c.out_extent(w, kw)) {
                    (Some(oh), Some(ow)) => Ok(vec![c.out_channels(), oh, ow]),
                    _ => Err(format!("conv2d kernel {kh}x{kw} exceeds padded input {input:?}")),
                }
            }
            Layer::MaxPool2d(g) | Layer::AvgPool2d(g) => {
                if input.len() < 2 {
                    return Err(format!("pooling needs spatial input, got {input:?}"));
                }
                let n = input.len();
                let mut out = input.to_vec();
                out[n - 2] = g.output_extent(input[n - 2])?;
                out[n - 1] = g.output_extent(input[n - 1])?;
                Ok(out)
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Applies the layer to a tensor whose shape has already been validated.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        let shape = self
            .output_shape(x.shape())
            .expect("apply called on validated shapes");
        let data = match self {
            Layer::Dense(d) => dense_forward(d, x.data()),
            Layer::Conv2d(c) => conv2d_forward(c, x.shape(), x.data()),
            Layer::Relu => x.data().iter().map(|&v| v.max(0.0)).collect(),
            Layer::MaxPool2d(g) => pool_forward(*g, x.shape(), x.data(), PoolOp::Max),
            Layer::AvgPool2d(g) => pool_forward(*g, x.shape(), x.data(), PoolOp::Avg),
            Layer::Flatten => x.data().to_vec(),
        };
        Tensor::new(shape, data).expect("layer output is finite for finite input")
    }
}

fn check_bias(bias: Option<&Tensor>, n: usize) -> Result<(), String> {
    match bias {
        Some(b) if b.shape() != [n] => Err(format!("bias shape {:?} != [{n}]", b.shape())),
        _ => Ok(()),
    }
}

pub(crate) fn dense_forward(d: &Dense, x: &[f64]) -> Vec<f64> {
    let (out, inp) = (d.out_features(), d.in_features());
    let w = d.weight.data();
    (0..out)
        .map(|o| {
            let row = &w[o * inp..(o + 1) * inp];
            let acc: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            acc + d.bias.as_ref().map_or(0.0, |b| b.data()[o])
        })
        .collect()
}

pub(crate) fn conv2d_forward(c: &Conv2d, in_shape: &[usize], x: &[f64]) -> Vec<f64> {
    let (ic, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (kh, kw) = c.kernel();
    let oc = c.out_channels();
    let oh = c.out_extent(h, kh).unwrap();
    let ow = c.out_extent(w, kw).unwrap();
    let wt = c.weight.data();
    let pad = c.padding as isize;
    let mut out = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        let b = c.bias.as_ref().map_or(0.0, |b| b.data()[o]);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for i in 0..ic {
                    for ky in 0..kh {
                        let iy = (oy * c.stride + ky) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * c.stride + kx) as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += wt[((o * ic + i) * kh + ky) * kw + kx]
                                * x[(i * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc + b;
            }
        }
    }
    out
}

#[derive(Clone, Copy)]
pub(crate) enum PoolOp {
    Max,
    Avg,
}

pub(crate) fn pool_forward(g: PoolGeometry, shape: &[usize], x: &[f64], op: PoolOp) -> Vec<f64> {
    let n = shape.len();
    let (h, w) = (shape[n - 2], shape[n - 1]);
    let channels: usize = shape[..n - 2].iter().product();
    let oh = g.output_extent(h).unwrap();
    let ow = g.output_extent(w).unwrap();
    let mut out = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let (mut max, mut sum, mut count) = (f64::NEG_INFINITY, 0.0, 0usize);
                for iy in g.window(oy, h) {
                    for ix in g.window(ox, w) {
                        let v = plane[iy * w + ix];
                        max = max.max(v);
                        sum += v;
                        count += 1;
                    }
                }
                out.push(match op {
                    PoolOp::Max => max,
                    PoolOp::Avg => sum / count as f64,
                });
            }
        }
    }
    out
}

/// Max pooling over the last two axes of `input`. Partial windows produced by
/// ceil mode pool over their in-bounds members only.
pub fn forward_ceil_pool(input: &Tensor, kernel: usize, stride: usize, ceil_mode: bool) -> Result<Tensor> {
    let layer = Layer::MaxPool2d(PoolGeometry::new(kernel, stride, ceil_mode)?);
    let shape = layer
        .output_shape(input.shape())
        .map_err(|reason| Error::InvalidLayer { layer: 0, reason })?;
    let data = match &layer {
        Layer::MaxPool2d(g) => pool_forward(*g, input.shape(), input.data(), PoolOp::Max),
        _ => unreachable!(),
    };
    Tensor::new(shape, data)
}

/// A strictly sequential network with validated layer shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGraph {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
}

impl NetworkGraph {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "input shape must have positive extents, got {input_shape:?}"
            )));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut cur = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            cur = layer
                .output_shape(&cur)
                .map_err(|reason| Error::InvalidLayer { layer: i, reason })?;
            shapes.push(cur.clone());
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Output shape of layer `i`.
    pub fn shape_of(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    /// Input shape of layer `i`.
    pub fn input_shape_of(&self, i: usize) -> &[usize] {
        if i == 0 {
            &self.input_shape
        } else {
            &self.shapes[i - 1]
        }
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().map_or(&self.input_shape, |s| s)
    }

    /// Indices of dense/conv layers in order.
    pub fn weighted_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].is_weighted())
            .collect()
    }

    /// Copy of the graph with the layer list replaced; shapes are revalidated.
    pub fn with_layers(&self, layers: Vec<Layer>) -> Result<Self> {
        Self::new(self.input_shape.clone(), layers)
    }

    /// Output of every layer, in order.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                layer: 0,
                expected: self.input_shape.clone(),
                got: x.shape().to_vec(),
            });
        }
        let mut outs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let next = layer.apply(outs.last().unwrap_or(x));
            outs.push(next);
        }
        Ok(outs)
    }

    /// Final-layer output only.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut outs = self.forward(x)?;
        Ok(outs.pop().unwrap_or_else(|| x.clone()))
    }
}
