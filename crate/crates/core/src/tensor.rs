//! Dense HWC activation tensors and the handful of kernels needed to run
//! inverted-residual blocks.
//!
//! Storage is row-major with channels innermost: element `(y, x, c)` lives at
//! `(y * width + x) * channels + c`. Every kernel accumulates in `f64` and
//! rounds once on store, so results are within half an ulp of the exact
//! value regardless of summation length.

use crate::error::{arg_err, shape_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(shape_err!(
                "tensor dimensions must be positive, got {height}x{width}x{channels}"
            ));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| shape_err!("tensor {height}x{width}x{channels} overflows"))?;
        if data.len() != expected {
            return Err(shape_err!(
                "tensor {height}x{width}x{channels} needs {expected} values, got {}",
                data.len()
            ));
        }
        Ok(Tensor {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        assert!(height > 0 && width > 0 && channels > 0);
        Tensor {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        assert!(height > 0 && width > 0 && channels > 0);
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Tensor {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output size `ceil(in / stride)`. When the total padding is odd the
    /// extra row/column goes to the bottom/right, which is what stride-2
    /// MobileNetV2 layers expect on even-sized inputs.
    Same,
    /// No padding; output size `(in - k) / stride + 1`.
    Valid,
}

/// Output length and leading pad for one spatial axis.
pub fn output_geometry(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(arg_err!("stride must be positive"));
    }
    if kernel == 0 {
        return Err(arg_err!("kernel size must be positive"));
    }
    match padding {
        Padding::Valid => {
            if input < kernel {
                return Err(shape_err!(
                    "valid padding needs input {input} >= kernel {kernel}"
                ));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
    }
}

/// Convolution weights laid out `[kh, kw, c_in, c_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    kh: usize,
    kw: usize,
    c_in: usize,
    c_out: usize,
    data: Vec<f32>,
}

impl ConvKernel {
    pub fn new(kh: usize, kw: usize, c_in: usize, c_out: usize, data: Vec<f32>) -> Result<Self> {
        if kh == 0 || kw == 0 || c_in == 0 || c_out == 0 {
            return Err(shape_err!("conv kernel dimensions must be positive"));
        }
        if data.len() != kh * kw * c_in * c_out {
            return Err(shape_err!(
                "conv kernel [{kh}, {kw}, {c_in}, {c_out}] needs {} values, got {}",
                kh * kw * c_in * c_out,
                data.len()
            ));
        }
        Ok(ConvKernel {
            kh,
            kw,
            c_in,
            c_out,
            data,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.kh, self.kw, self.c_in, self.c_out]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, ky: usize, kx: usize, ci: usize, co: usize) -> f32 {
        self.data[((ky * self.kw + kx) * self.c_in + ci) * self.c_out + co]
    }
}

/// Depthwise weights laid out `[kh, kw, channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseKernel {
    kh: usize,
    kw: usize,
    channels: usize,
    data: Vec<f32>,
}

impl DepthwiseKernel {
    pub fn new(kh: usize, kw: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if kh == 0 || kw == 0 || channels == 0 {
            return Err(shape_err!("depthwise kernel dimensions must be positive"));
        }
        if data.len() != kh * kw * channels {
            return Err(shape_err!(
                "depthwise kernel [{kh}, {kw}, {channels}] needs {} values, got {}",
                kh * kw * channels,
                data.len()
            ));
        }
        Ok(DepthwiseKernel {
            kh,
            kw,
            channels,
            data,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.kh, self.kw, self.channels]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, ky: usize, kx: usize, c: usize) -> f32 {
        self.data[(ky * self.kw + kx) * self.channels + c]
    }
}

pub const DEFAULT_BN_EPSILON: f32 = 1e-3;

/// Inference-mode batch normalization parameters for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub variance: Vec<f32>,
    pub epsilon: f32,
}

impl BnParams {
    pub fn new(
        gamma: Vec<f32>,
        beta: Vec<f32>,
        mean: Vec<f32>,
        variance: Vec<f32>,
        epsilon: f32,
    ) -> Result<Self> {
        let c = gamma.len();
        if c == 0 || beta.len() != c || mean.len() != c || variance.len() != c {
            return Err(shape_err!(
                "batch norm arrays must share a positive length (gamma {}, beta {}, mean {}, variance {})",
                c,
                beta.len(),
                mean.len(),
                variance.len()
            ));
        }
        // epsilon = 0 is allowed as long as every denominator stays positive.
        if !(epsilon >= 0.0) {
            return Err(arg_err!("batch norm epsilon must be non-negative"));
        }
        if let Some(i) = variance
            .iter()
            .position(|&v| !(v >= 0.0) || !(v as f64 + epsilon as f64 > 0.0))
        {
            return Err(arg_err!(
                "batch norm variance[{i}] = {} gives a non-positive denominator",
                variance[i]
            ));
        }
        Ok(BnParams {
            gamma,
            beta,
            mean,
            variance,
            epsilon,
        })
    }

    /// Identity normalization for `channels` channels.
    pub fn identity(channels: usize) -> Self {
        BnParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            variance: vec![1.0; channels],
            epsilon: 0.0,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-channel `(scale, shift)` such that `out = in * scale + shift`.
    fn affine(&self) -> Vec<(f64, f64)> {
        (0..self.channels())
            .map(|c| {
                let scale = self.gamma[c] as f64
                    / (self.variance[c] as f64 + self.epsilon as f64).sqrt();
                (scale, self.beta[c] as f64 - self.mean[c] as f64 * scale)
            })
            .collect()
    }

    pub fn apply_inplace(&self, t: &mut Tensor) -> Result<()> {
        if t.channels != self.channels() {
            return Err(shape_err!(
                "batch norm has {} channels, tensor has {}",
                self.channels(),
                t.channels
            ));
        }
        let affine = self.affine();
        for px in t.data.chunks_exact_mut(affine.len()) {
            for (v, &(scale, shift)) in px.iter_mut().zip(&affine) {
                *v = (*v as f64 * scale + shift) as f32;
            }
        }
        Ok(())
    }
}

pub fn conv2d(
    input: &Tensor,
    kernel: &ConvKernel,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    if kernel.c_in != input.channels {
        return Err(shape_err!(
            "conv kernel expects {} input channels, tensor has {}",
            kernel.c_in,
            input.channels
        ));
    }
    let (out_h, pad_top) = output_geometry(input.height, kernel.kh, stride, padding)?;
    let (out_w, pad_left) = output_geometry(input.width, kernel.kw, stride, padding)?;
    let (c_in, c_out) = (kernel.c_in, kernel.c_out);

    let mut out = Vec::with_capacity(out_h * out_w * c_out);
    let mut acc = vec![0f64; c_out];
    for oy in 0..out_h {
        for ox in 0..out_w {
            acc.fill(0.0);
            for ky in 0..kernel.kh {
                let Some(iy) = (oy * stride + ky).checked_sub(pad_top) else {
                    continue;
                };
                if iy >= input.height {
                    continue;
                }
                for kx in 0..kernel.kw {
                    let Some(ix) = (ox * stride + kx).checked_sub(pad_left) else {
                        continue;
                    };
                    if ix >= input.width {
                        continue;
                    }
                    let pixel = &input.data[(iy * input.width + ix) * c_in..][..c_in];
                    let taps = &kernel.data[(ky * kernel.kw + kx) * c_in * c_out..][..c_in * c_out];
                    for (&xv, row) in pixel.iter().zip(taps.chunks_exact(c_out)) {
                        // post-ReLU inputs are roughly half zeros
                        if xv == 0.0 {
                            continue;
                        }
                        let xv = xv as f64;
                        for (a, &w) in acc.iter_mut().zip(row) {
                            *a += xv * w as f64;
                        }
                    }
                }
            }
            out.extend(acc.iter().map(|&a| a as f32));
        }
    }
    Tensor::new(out_h, out_w, c_out, out)
}

pub fn depthwise_conv2d(
    input: &Tensor,
    kernel: &DepthwiseKernel,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    if kernel.channels != input.channels {
        return Err(shape_err!(
            "depthwise kernel has {} channels, tensor has {}",
            kernel.channels,
            input.channels
        ));
    }
    let (out_h, pad_top) = output_geometry(input.height, kernel.kh, stride, padding)?;
    let (out_w, pad_left) = output_geometry(input.width, kernel.kw, stride, padding)?;
    let c = kernel.channels;

    let mut out = Vec::with_capacity(out_h * out_w * c);
    let mut acc = vec![0f64; c];
    for oy in 0..out_h {
        for ox in 0..out_w {
            acc.fill(0.0);
            for ky in 0..kernel.kh {
                let Some(iy) = (oy * stride + ky).checked_sub(pad_top) else {
                    continue;
                };
                if iy >= input.height {
                    continue;
                }
                for kx in 0..kernel.kw {
                    let Some(ix) = (ox * stride + kx).checked_sub(pad_left) else {
                        continue;
                    };
                    if ix >= input.width {
                        continue;
                    }
                    let pixel = &input.data[(iy * input.width + ix) * c..][..c];
                    let taps = &kernel.data[(ky * kernel.kw + kx) * c..][..c];
                    for ((a, &xv), &w) in acc.iter_mut().zip(pixel).zip(taps) {
                        *a += xv as f64 * w as f64;
                    }
                }
            }
            out.extend(acc.iter().map(|&a| a as f32));
        }
    }
    Tensor::new(out_h, out_w, c, out)
}

pub fn batch_norm(input: &Tensor, params: &BnParams) -> Result<Tensor> {
    let mut out = input.clone();
    params.apply_inplace(&mut out)?;
    Ok(out)
}

pub fn relu6(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    relu6_inplace(&mut out);
    out
}

pub fn relu6_inplace(t: &mut Tensor) {
    for v in &mut t.data {
        *v = v.clamp(0.0, 6.0);
    }
}

/// Per-channel spatial mean.
pub fn global_average_pool(input: &Tensor) -> Vec<f32> {
    let mut sums = vec![0f64; input.channels];
    for px in input.data.chunks_exact(input.channels) {
        for (s, &v) in sums.iter_mut().zip(px) {
            *s += v as f64;
        }
    }
    let n = (input.height * input.width) as f64;
    sums.into_iter().map(|s| (s / n) as f32).collect()
}

pub fn add_residual(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut out = a.clone();
    add_residual_inplace(&mut out, b)?;
    Ok(out)
}

pub fn add_residual_inplace(acc: &mut Tensor, b: &Tensor) -> Result<()> {
    if acc.shape() != b.shape() {
        return Err(shape_err!(
            "residual shapes differ: {:?} vs {:?}",
            acc.shape(),
            b.shape()
        ));
    }
    for (x, &y) in acc.data.iter_mut().zip(&b.data) {
        *x += y;
    }
    Ok(())
}
