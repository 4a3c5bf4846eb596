use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

/// Elementwise activation applied after a layer's affine map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Activation {
    None,
    Relu,
    /// Clamp into `[lo, hi]`; gradient passes where `lo <= x <= hi`.
    Clip {
        lo: f64,
        hi: f64,
    },
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::None => x,
            Activation::Relu => x.max(0.0),
            Activation::Clip { lo, hi } => x.clamp(lo, hi),
        }
    }

    /// Derivative evaluated at the pre-activation value.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::None => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Clip { lo, hi } => {
                if (lo..=hi).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Elementwise clamp of a tensor into `[lo, hi]`.
pub fn clip_by_value(x: &Tensor, lo: f64, hi: f64) -> Result<Tensor, NnError> {
    if lo >= hi || !lo.is_finite() || !hi.is_finite() {
        return Err(NnError::Config(format!("clip range [{lo}, {hi}] is empty")));
    }
    Ok(x.map(|v| v.clamp(lo, hi)))
}

/// Gradient of [`clip_by_value`]: passes `upstream` where `lo <= x <= hi`.
pub fn clip_by_value_backward(x: &Tensor, upstream: &Tensor, lo: f64, hi: f64) -> Tensor {
    let mut out = upstream.clone();
    for (g, &v) in out.data_mut().iter_mut().zip(x.data()) {
        if !(lo..=hi).contains(&v) {
            *g = 0.0;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    /// Fully connected; flattens everything after the batch axis.
    Dense {
        inputs: usize,
        outputs: usize,
        bias: bool,
    },
    /// Square kernel, zero padding `kernel / 2`.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    /// Nearest-neighbour 2x upsampling followed by a stride-1 convolution.
    UpsampleConv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense {
                inputs,
                outputs,
                bias: true,
            },
            activation,
        }
    }

    pub fn linear_no_bias(inputs: usize, outputs: usize) -> Self {
        Self {
            kind: LayerKind::Dense {
                inputs,
                outputs,
                bias: false,
            },
            activation: Activation::None,
        }
    }

    pub fn conv(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
    ) -> Self {
        Self {
            kind: LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            },
            activation,
        }
    }

    pub fn upsample_conv(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        activation: Activation,
    ) -> Self {
        Self {
            kind: LayerKind::UpsampleConv {
                in_channels,
                out_channels,
                kernel,
            },
            activation,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let ok = match self.kind {
            LayerKind::Dense {
                inputs, outputs, ..
            } => inputs > 0 && outputs > 0,
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => in_channels > 0 && out_channels > 0 && kernel % 2 == 1 && stride > 0,
            LayerKind::UpsampleConv {
                in_channels,
                out_channels,
                kernel,
            } => in_channels > 0 && out_channels > 0 && kernel % 2 == 1,
        };
        if let Activation::Clip { lo, hi } = self.activation {
            if lo >= hi {
                return Err(NnError::Config(format!("clip range [{lo}, {hi}] is empty")));
            }
        }
        if ok {
            Ok(())
        } else {
            Err(NnError::Config(format!("invalid layer spec {self:?}")))
        }
    }

    fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Dense {
                inputs, outputs, ..
            } => vec![outputs, inputs],
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            }
            | LayerKind::UpsampleConv {
                in_channels,
                out_channels,
                kernel,
            } => vec![out_channels, in_channels, kernel, kernel],
        }
    }

    fn out_features(&self) -> usize {
        match self.kind {
            LayerKind::Dense { outputs, .. } => outputs,
            LayerKind::Conv2d { out_channels, .. }
            | LayerKind::UpsampleConv { out_channels, .. } => out_channels,
        }
    }

    fn has_bias(&self) -> bool {
        !matches!(self.kind, LayerKind::Dense { bias: false, .. })
    }

    fn fan_in(&self) -> usize {
        let w = self.weight_shape();
        w[1..].iter().product()
    }
}

/// A layer's specification together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Layer {
    /// Uniform fan-in initialisation. Clip-activated layers start their bias at
    /// the middle of the clip range so outputs begin inside the linear region.
    pub fn init(spec: LayerSpec, rng: &mut impl Rng) -> Result<Self, NnError> {
        spec.validate()?;
        let gain = match spec.activation {
            Activation::Relu => 6.0,
            _ => 3.0,
        };
        let bound = (gain / spec.fan_in() as f64).sqrt();
        let shape = spec.weight_shape();
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
        let weight = Tensor::from_vec(&shape, data)?;
        let bias = spec.has_bias().then(|| {
            let start = match spec.activation {
                Activation::Clip { lo, hi } => 0.5 * (lo + hi),
                _ => 0.0,
            };
            Tensor::full(&[spec.out_features()], start)
        });
        Ok(Self { spec, weight, bias })
    }

    pub fn param_count(&self) -> usize {
        1 + usize::from(self.bias.is_some())
    }

    /// Output shape for an input of shape `input`.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        match self.spec.kind {
            LayerKind::Dense {
                inputs, outputs, ..
            } => {
                let n = input.first().copied().unwrap_or(0);
                let features: usize = input.iter().skip(1).product();
                if features != inputs || input.len() < 2 {
                    return Err(NnError::Shape(format!(
                        "dense layer expects {inputs} features, got input {input:?}"
                    )));
                }
                Ok(vec![n, outputs])
            }
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let [n, c, h, w] = four_d(input)?;
                if c != in_channels {
                    return Err(NnError::Shape(format!(
                        "conv expects {in_channels} channels, got input {input:?}"
                    )));
                }
                let pad = kernel / 2;
                Ok(vec![
                    n,
                    out_channels,
                    (h + 2 * pad - kernel) / stride + 1,
                    (w + 2 * pad - kernel) / stride + 1,
                ])
            }
            LayerKind::UpsampleConv {
                in_channels,
                out_channels,
                ..
            } => {
                let [n, c, h, w] = four_d(input)?;
                if c != in_channels {
                    return Err(NnError::Shape(format!(
                        "upsample-conv expects {in_channels} channels, got input {input:?}"
                    )));
                }
                Ok(vec![n, out_channels, 2 * h, 2 * w])
            }
        }
    }

    /// Affine part of the layer (before activation).
    pub fn affine(&self, input: &Tensor) -> Result<Tensor, NnError> {
        let out_shape = self.output_shape(input.shape())?;
        let mut out = Tensor::zeros(&out_shape);
        match self.spec.kind {
            LayerKind::Dense {
                inputs, outputs, ..
            } => dense_forward(
                input.data(),
                self.weight.data(),
                self.bias.as_ref().map(|b| b.data()),
                out.data_mut(),
                input.batch(),
                inputs,
                outputs,
            ),
            LayerKind::Conv2d { kernel, stride, .. } => {
                let geo = ConvGeometry::new(input.shape(), &out_shape, kernel, stride);
                conv_forward(
                    &geo,
                    input.data(),
                    &self.weight,
                    self.bias.as_ref(),
                    out.data_mut(),
                );
            }
            LayerKind::UpsampleConv { kernel, .. } => {
                let up = upsample2x(input);
                let geo = ConvGeometry::new(up.shape(), &out_shape, kernel, 1);
                conv_forward(
                    &geo,
                    up.data(),
                    &self.weight,
                    self.bias.as_ref(),
                    out.data_mut(),
                );
            }
        }
        Ok(out)
    }

    /// Backward pass of the affine part. Returns the input gradient and, when
    /// `want_params` is set, the parameter gradients `[weight, bias?]`.
    pub fn affine_backward(
        &self,
        input: &Tensor,
        grad_out: &Tensor,
        want_params: bool,
    ) -> (Tensor, Vec<Tensor>) {
        let mut grad_in = Tensor::zeros(input.shape());
        let mut grad_w = Tensor::zeros(self.weight.shape());
        let mut grad_b = self.bias.as_ref().map(|b| Tensor::zeros(b.shape()));
        match self.spec.kind {
            LayerKind::Dense {
                inputs, outputs, ..
            } => dense_backward(
                input.data(),
                self.weight.data(),
                grad_out.data(),
                grad_in.data_mut(),
                want_params.then_some(grad_w.data_mut()),
                if want_params {
                    grad_b.as_mut().map(|b| b.data_mut())
                } else {
                    None
                },
                input.batch(),
                inputs,
                outputs,
            ),
            LayerKind::Conv2d { kernel, stride, .. } => {
                let geo = ConvGeometry::new(input.shape(), grad_out.shape(), kernel, stride);
                conv_backward(
                    &geo,
                    input.data(),
                    &self.weight,
                    grad_out.data(),
                    grad_in.data_mut(),
                    want_params.then_some(&mut grad_w),
                    if want_params { grad_b.as_mut() } else { None },
                );
            }
            LayerKind::UpsampleConv { kernel, .. } => {
                let up = upsample2x(input);
                let mut grad_up = Tensor::zeros(up.shape());
                let geo = ConvGeometry::new(up.shape(), grad_out.shape(), kernel, 1);
                conv_backward(
                    &geo,
                    up.data(),
                    &self.weight,
                    grad_out.data(),
                    grad_up.data_mut(),
                    want_params.then_some(&mut grad_w),
                    if want_params { grad_b.as_mut() } else { None },
                );
                grad_in = downsample2x_sum(&grad_up);
            }
        }
        let mut params = Vec::new();
        if want_params {
            params.push(grad_w);
            if let Some(b) = grad_b {
                params.push(b);
            }
        }
        (grad_in, params)
    }
}

fn four_d(shape: &[usize]) -> Result<[usize; 4], NnError> {
    match shape {
        &[n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(NnError::Shape(format!(
            "expected a [batch, channels, height, width] tensor, got {shape:?}"
        ))),
    }
}

fn dense_forward(
    x: &[f64],
    w: &[f64],
    b: Option<&[f64]>,
    y: &mut [f64],
    batch: usize,
    inputs: usize,
    outputs: usize,
) {
    for n in 0..batch {
        let xr = &x[n * inputs..(n + 1) * inputs];
        let yr = &mut y[n * outputs..(n + 1) * outputs];
        for (o, yo) in yr.iter_mut().enumerate() {
            let wr = &w[o * inputs..(o + 1) * inputs];
            let mut acc = b.map_or(0.0, |b| b[o]);
            for (wi, xi) in wr.iter().zip(xr) {
                acc += wi * xi;
            }
            *yo = acc;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    mut dw: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
    batch: usize,
    inputs: usize,
    outputs: usize,
) {
    for n in 0..batch {
        let xr = &x[n * inputs..(n + 1) * inputs];
        let dyr = &dy[n * outputs..(n + 1) * outputs];
        let dxr = &mut dx[n * inputs..(n + 1) * inputs];
        for (o, &g) in dyr.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let wr = &w[o * inputs..(o + 1) * inputs];
            for (d, wi) in dxr.iter_mut().zip(wr) {
                *d += g * wi;
            }
            if let Some(dw) = dw.as_deref_mut() {
                for (d, xi) in dw[o * inputs..(o + 1) * inputs].iter_mut().zip(xr) {
                    *d += g * xi;
                }
            }
            if let Some(db) = db.as_deref_mut() {
                db[o] += g;
            }
        }
    }
}

/// Index bookkeeping shared by the convolution kernels.
struct ConvGeometry {
    batch: usize,
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    fn new(input: &[usize], output: &[usize], kernel: usize, stride: usize) -> Self {
        Self {
            batch: input[0],
            in_c: input[1],
            in_h: input[2],
            in_w: input[3],
            out_c: output[1],
            out_h: output[2],
            out_w: output[3],
            kernel,
            stride,
            pad: kernel / 2,
        }
    }

    /// Output positions `o` along one axis whose tap `k` lands inside the input.
    fn valid_range(&self, k: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad > k {
            (self.pad - k).div_ceil(s)
        } else {
            0
        };
        let reach = in_len + self.pad;
        let hi = if reach > k {
            (reach - k).div_ceil(s).min(out_len)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

fn conv_forward(geo: &ConvGeometry, x: &[f64], w: &Tensor, b: Option<&Tensor>, y: &mut [f64]) {
    let k = geo.kernel;
    let s = geo.stride;
    let in_plane = geo.in_h * geo.in_w;
    let out_plane = geo.out_h * geo.out_w;
    let wd = w.data();
    for n in 0..geo.batch {
        for oc in 0..geo.out_c {
            let yo = &mut y[(n * geo.out_c + oc) * out_plane..][..out_plane];
            if let Some(b) = b {
                yo.fill(b.data()[oc]);
            }
            for ic in 0..geo.in_c {
                let xi = &x[(n * geo.in_c + ic) * in_plane..][..in_plane];
                for ky in 0..k {
                    let (oy0, oy1) = geo.valid_range(ky, geo.in_h, geo.out_h);
                    for kx in 0..k {
                        let weight = wd[((oc * geo.in_c + ic) * k + ky) * k + kx];
                        let (ox0, ox1) = geo.valid_range(kx, geo.in_w, geo.out_w);
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - geo.pad;
                            let xrow = &xi[iy * geo.in_w..][..geo.in_w];
                            let yrow = &mut yo[oy * geo.out_w..][..geo.out_w];
                            if s == 1 {
                                let off = ox0 + kx - geo.pad;
                                for (yv, xv) in yrow[ox0..ox1].iter_mut().zip(&xrow[off..]) {
                                    *yv += weight * xv;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    yrow[ox] += weight * xrow[ox * s + kx - geo.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_backward(
    geo: &ConvGeometry,
    x: &[f64],
    w: &Tensor,
    dy: &[f64],
    dx: &mut [f64],
    mut dw: Option<&mut Tensor>,
    mut db: Option<&mut Tensor>,
) {
    let k = geo.kernel;
    let s = geo.stride;
    let in_plane = geo.in_h * geo.in_w;
    let out_plane = geo.out_h * geo.out_w;
    let wd = w.data();
    for n in 0..geo.batch {
        for oc in 0..geo.out_c {
            let go = &dy[(n * geo.out_c + oc) * out_plane..][..out_plane];
            if let Some(db) = db.as_deref_mut() {
                db.data_mut()[oc] += go.iter().sum::<f64>();
            }
            for ic in 0..geo.in_c {
                let base = (n * geo.in_c + ic) * in_plane;
                for ky in 0..k {
                    let (oy0, oy1) = geo.valid_range(ky, geo.in_h, geo.out_h);
                    for kx in 0..k {
                        let widx = ((oc * geo.in_c + ic) * k + ky) * k + kx;
                        let weight = wd[widx];
                        let (ox0, ox1) = geo.valid_range(kx, geo.in_w, geo.out_w);
                        let mut acc = 0.0;
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - geo.pad;
                            let row = base + iy * geo.in_w;
                            let grow = &go[oy * geo.out_w..][..geo.out_w];
                            if s == 1 {
                                let off = row + ox0 + kx - geo.pad;
                                let len = ox1 - ox0;
                                let xrow = &x[off..off + len];
                                let dxrow = &mut dx[off..off + len];
                                for ((d, xv), g) in dxrow.iter_mut().zip(xrow).zip(&grow[ox0..ox1])
                                {
                                    *d += weight * g;
                                    acc += g * xv;
                                }
                            } else {
                                for (ox, &g) in grow.iter().enumerate().take(ox1).skip(ox0) {
                                    let ix = row + ox * s + kx - geo.pad;
                                    dx[ix] += weight * g;
                                    acc += g * x[ix];
                                }
                            }
                        }
                        if let Some(dw) = dw.as_deref_mut() {
                            dw.data_mut()[widx] += acc;
                        }
                    }
                }
            }
        }
    }
}

fn upsample2x(x: &Tensor) -> Tensor {
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let sp = &src[plane * h * w..][..h * w];
        let dp = &mut dst[plane * 4 * h * w..][..4 * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dp[y * 2 * w + xx] = sp[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

fn downsample2x_sum(g: &Tensor) -> Tensor {
    let [n, c, h2, w2] = [g.shape()[0], g.shape()[1], g.shape()[2], g.shape()[3]];
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Tensor::zeros(&[n, c, h, w]);
    let src = g.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let sp = &src[plane * h2 * w2..][..h2 * w2];
        let dp = &mut dst[plane * h * w..][..h * w];
        for y in 0..h2 {
            for xx in 0..w2 {
                dp[(y / 2) * w + xx / 2] += sp[y * w2 + xx];
            }
        }
    }
    out
}
