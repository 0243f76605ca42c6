//! Convolutional Q-network: two 3×3 conv layers (2 and 4 channels), each
//! followed by batch normalization and ReLU, then a ReLU hidden layer and a
//! linear output with one Q-value per action.
//!
//! Forward, backward and the optimizer are written out by hand and are
//! generic over [`Real`] so the same code runs in `f32` for training and in
//! `f64` for gradient checking.

mod adam;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

pub use adam::{adam_step, AdamConfig, AdamState};

use crate::event::EventFrame;
use crate::math::Real;
use crate::{Error, Result};

/// Convolution kernel size.
pub const KERNEL: usize = 3;
/// Output channels of the first convolution.
pub const CONV1_CHANNELS: usize = 2;
/// Output channels of the second convolution.
pub const CONV2_CHANNELS: usize = 4;
/// Default hidden layer width.
pub const HIDDEN: usize = 100;
/// Variance offset of batch normalization.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics update rate of batch normalization.
pub const BN_MOMENTUM: f64 = 0.1;
/// Huber loss transition point.
pub const HUBER_DELTA: f64 = 1.0;

/// Input resolution, action count and the free architectural knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NetworkConfig {
    /// Input width.
    pub width: usize,
    /// Input height.
    pub height: usize,
    /// Number of actions (output size).
    pub actions: usize,
    /// Stride of both convolutions.
    pub stride: usize,
    /// Zero padding of both convolutions.
    pub padding: usize,
    /// Hidden layer width.
    pub hidden: usize,
}

impl NetworkConfig {
    /// Stride 4, padding 1, hidden width 100.
    pub fn new(width: usize, height: usize, actions: usize) -> Self {
        NetworkConfig {
            width,
            height,
            actions,
            stride: 4,
            padding: 1,
            hidden: HIDDEN,
        }
    }

    fn conv_out(&self, n: usize) -> Option<usize> {
        (n + 2 * self.padding).checked_sub(KERNEL).map(|v| v / self.stride + 1)
    }

    /// `(height, width)` after the first convolution.
    pub fn conv1_size(&self) -> (usize, usize) {
        (
            self.conv_out(self.height).unwrap_or(0),
            self.conv_out(self.width).unwrap_or(0),
        )
    }

    /// `(height, width)` after the second convolution.
    pub fn conv2_size(&self) -> (usize, usize) {
        let (h, w) = self.conv1_size();
        (self.conv_out(h).unwrap_or(0), self.conv_out(w).unwrap_or(0))
    }

    /// Length of the flattened convolutional features.
    pub fn flatten_len(&self) -> usize {
        let (h, w) = self.conv2_size();
        CONV2_CHANNELS * h * w
    }

    /// Rejects configurations that collapse to an empty feature map.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.actions == 0 || self.hidden == 0 || self.stride == 0 {
            return Err(Error::invalid("network dimensions must be positive"));
        }
        if self.padding >= KERNEL {
            return Err(Error::invalid("padding must be smaller than the kernel"));
        }
        if self.flatten_len() == 0 {
            return Err(Error::invalid(format!(
                "input {}x{} too small for stride {}",
                self.width, self.height, self.stride
            )));
        }
        Ok(())
    }
}

/// Dense row-major array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    /// Wraps data, checking that its length matches the shape.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    /// Zero-filled tensor.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::ZERO; n],
        }
    }

    /// Stacks event frames into a `[B, 1, H, W]` batch.
    pub fn from_frames<'a, I>(frames: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a EventFrame>,
    {
        let mut data = Vec::new();
        let mut dims = None;
        let mut batch = 0;
        for f in frames {
            let d = (f.height(), f.width());
            if *dims.get_or_insert(d) != d {
                return Err(Error::invalid("frames in a batch must share dimensions"));
            }
            data.extend(f.values().iter().map(|&v| T::from_f64(v as f64)));
            batch += 1;
        }
        let (h, w) = dims.ok_or_else(|| Error::invalid("empty batch"))?;
        Ok(Tensor {
            shape: vec![batch, 1, h, w],
            data,
        })
    }

    /// Dimensions.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Row-major values.
    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable row-major values.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }
}

/// The trainable parameters, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    /// `[2, 1, 3, 3]`
    pub conv1_weight: Vec<T>,
    /// `[2]`
    pub conv1_bias: Vec<T>,
    /// `[2]`
    pub bn1_gain: Vec<T>,
    /// `[2]`
    pub bn1_bias: Vec<T>,
    /// `[4, 2, 3, 3]`
    pub conv2_weight: Vec<T>,
    /// `[4]`
    pub conv2_bias: Vec<T>,
    /// `[4]`
    pub bn2_gain: Vec<T>,
    /// `[4]`
    pub bn2_bias: Vec<T>,
    /// `[hidden, flatten]`
    pub fc1_weight: Vec<T>,
    /// `[hidden]`
    pub fc1_bias: Vec<T>,
    /// `[actions, hidden]`
    pub fc2_weight: Vec<T>,
    /// `[actions]`
    pub fc2_bias: Vec<T>,
}

impl<T: Real> ParamSet<T> {
    /// Field names in declaration order.
    pub const NAMES: [&'static str; 12] = [
        "conv1_weight",
        "conv1_bias",
        "bn1_gain",
        "bn1_bias",
        "conv2_weight",
        "conv2_bias",
        "bn2_gain",
        "bn2_bias",
        "fc1_weight",
        "fc1_bias",
        "fc2_weight",
        "fc2_bias",
    ];

    /// Zero arrays shaped for `config`.
    pub fn zeros(config: &NetworkConfig) -> Self {
        let z = |n: usize| vec![T::ZERO; n];
        ParamSet {
            conv1_weight: z(CONV1_CHANNELS * KERNEL * KERNEL),
            conv1_bias: z(CONV1_CHANNELS),
            bn1_gain: z(CONV1_CHANNELS),
            bn1_bias: z(CONV1_CHANNELS),
            conv2_weight: z(CONV2_CHANNELS * CONV1_CHANNELS * KERNEL * KERNEL),
            conv2_bias: z(CONV2_CHANNELS),
            bn2_gain: z(CONV2_CHANNELS),
            bn2_bias: z(CONV2_CHANNELS),
            fc1_weight: z(config.hidden * config.flatten_len()),
            fc1_bias: z(config.hidden),
            fc2_weight: z(config.actions * config.hidden),
            fc2_bias: z(config.actions),
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for s in out.slices_mut() {
            s.fill(T::ZERO);
        }
        out
    }

    /// Arrays in declaration order.
    pub fn slices(&self) -> [&[T]; 12] {
        [
            &self.conv1_weight,
            &self.conv1_bias,
            &self.bn1_gain,
            &self.bn1_bias,
            &self.conv2_weight,
            &self.conv2_bias,
            &self.bn2_gain,
            &self.bn2_bias,
            &self.fc1_weight,
            &self.fc1_bias,
            &self.fc2_weight,
            &self.fc2_bias,
        ]
    }

    /// Mutable arrays in declaration order.
    pub fn slices_mut(&mut self) -> [&mut [T]; 12] {
        [
            &mut self.conv1_weight,
            &mut self.conv1_bias,
            &mut self.bn1_gain,
            &mut self.bn1_bias,
            &mut self.conv2_weight,
            &mut self.conv2_bias,
            &mut self.bn2_gain,
            &mut self.bn2_bias,
            &mut self.fc1_weight,
            &mut self.fc1_bias,
            &mut self.fc2_weight,
            &mut self.fc2_bias,
        ]
    }
}

/// Running mean and variance of one batch-normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats<T> {
    /// Per-channel running mean.
    pub mean: Vec<T>,
    /// Per-channel running variance.
    pub var: Vec<T>,
}

impl<T: Real> BatchNormStats<T> {
    fn new(channels: usize) -> Self {
        BatchNormStats {
            mean: vec![T::ZERO; channels],
            var: vec![T::ONE; channels],
        }
    }
}

/// Whether batch normalization uses batch or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; nothing is mutated.
    Eval,
}

/// Q-network parameters and batch-normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork<T> {
    config: NetworkConfig,
    params: ParamSet<T>,
    bn1: BatchNormStats<T>,
    bn2: BatchNormStats<T>,
}

/// Intermediate activations kept for backprop.
struct Trace<T> {
    batch: usize,
    input: Vec<T>,
    xhat1: Vec<T>,
    inv_std1: Vec<T>,
    act1: Vec<T>,
    xhat2: Vec<T>,
    inv_std2: Vec<T>,
    act2: Vec<T>,
    hidden: Vec<T>,
    q: Vec<T>,
}

fn check_finite<T: Real>(values: &[T], stage: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { stage })
    }
}

/// Geometry of one convolution.
#[derive(Clone, Copy)]
struct ConvShape {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvShape {
    /// Input index feeding output `(oh, ow)` through tap `(kh, kw)`, if inside.
    #[inline]
    fn source(&self, o_row: usize, o_col: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        let r = (o_row * self.stride + kh).checked_sub(self.pad)?;
        let c = (o_col * self.stride + kw).checked_sub(self.pad)?;
        (r < self.h && c < self.w).then_some((r, c))
    }

    fn forward<T: Real>(&self, input: &[T], batch: usize, weight: &[T], bias: &[T]) -> Vec<T> {
        let mut out = vec![T::ZERO; batch * self.cout * self.oh * self.ow];
        let in_plane = self.h * self.w;
        let out_plane = self.oh * self.ow;
        for b in 0..batch {
            for co in 0..self.cout {
                let dst = &mut out[(b * self.cout + co) * out_plane..][..out_plane];
                for orow in 0..self.oh {
                    for ocol in 0..self.ow {
                        let mut acc = bias[co];
                        for ci in 0..self.cin {
                            let src = &input[(b * self.cin + ci) * in_plane..][..in_plane];
                            let wk = &weight[(co * self.cin + ci) * KERNEL * KERNEL..][..KERNEL * KERNEL];
                            for kh in 0..KERNEL {
                                for kw in 0..KERNEL {
                                    if let Some((r, c)) = self.source(orow, ocol, kh, kw) {
                                        acc += wk[kh * KERNEL + kw] * src[r * self.w + c];
                                    }
                                }
                            }
                        }
                        dst[orow * self.ow + ocol] = acc;
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight and bias gradients; returns the input gradient when asked.
    fn backward<T: Real>(
        &self,
        input: &[T],
        batch: usize,
        weight: &[T],
        d_out: &[T],
        d_weight: &mut [T],
        d_bias: &mut [T],
        want_input_grad: bool,
    ) -> Option<Vec<T>> {
        let in_plane = self.h * self.w;
        let out_plane = self.oh * self.ow;
        let mut d_in = want_input_grad.then(|| vec![T::ZERO; batch * self.cin * in_plane]);
        for b in 0..batch {
            for co in 0..self.cout {
                let g = &d_out[(b * self.cout + co) * out_plane..][..out_plane];
                for orow in 0..self.oh {
                    for ocol in 0..self.ow {
                        let go = g[orow * self.ow + ocol];
                        d_bias[co] += go;
                        for ci in 0..self.cin {
                            let base = (b * self.cin + ci) * in_plane;
                            let k0 = (co * self.cin + ci) * KERNEL * KERNEL;
                            for kh in 0..KERNEL {
                                for kw in 0..KERNEL {
                                    if let Some((r, c)) = self.source(orow, ocol, kh, kw) {
                                        let k = k0 + kh * KERNEL + kw;
                                        d_weight[k] += go * input[base + r * self.w + c];
                                        if let Some(d) = d_in.as_mut() {
                                            d[base + r * self.w + c] += go * weight[k];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        d_in
    }
}

/// Batch normalization followed by ReLU over `[B, C, plane]` data.
/// Returns `(xhat, inv_std, activations)`.
fn batch_norm_relu<T: Real>(
    x: &[T],
    batch: usize,
    channels: usize,
    plane: usize,
    gain: &[T],
    bias: &[T],
    stats: &mut BatchNormStats<T>,
    mode: Mode,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut xhat = vec![T::ZERO; x.len()];
    let mut act = vec![T::ZERO; x.len()];
    let mut inv_std = vec![T::ZERO; channels];
    let eps = T::from_f64(BN_EPS);
    let n = batch * plane;
    for c in 0..channels {
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = T::ZERO;
                for b in 0..batch {
                    for v in &x[(b * channels + c) * plane..][..plane] {
                        sum += *v;
                    }
                }
                let mean = sum / T::from_f64(n as f64);
                let mut sq = T::ZERO;
                for b in 0..batch {
                    for v in &x[(b * channels + c) * plane..][..plane] {
                        let d = *v - mean;
                        sq += d * d;
                    }
                }
                let var = sq / T::from_f64(n as f64);
                let unbiased = if n > 1 { sq / T::from_f64((n - 1) as f64) } else { var };
                let m = T::from_f64(BN_MOMENTUM);
                stats.mean[c] = (T::ONE - m) * stats.mean[c] + m * mean;
                stats.var[c] = (T::ONE - m) * stats.var[c] + m * unbiased;
                (mean, var)
            }
            Mode::Eval => (stats.mean[c], stats.var[c]),
        };
        let istd = T::ONE / (var + eps).sqrt();
        inv_std[c] = istd;
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            for i in off..off + plane {
                let xh = (x[i] - mean) * istd;
                xhat[i] = xh;
                let y = gain[c] * xh + bias[c];
                act[i] = if y > T::ZERO { y } else { T::ZERO };
            }
        }
    }
    (xhat, inv_std, act)
}

/// Backward through ReLU and train-mode batch normalization. Accumulates
/// gain/bias gradients and returns the gradient w.r.t. the normalized input.
fn batch_norm_relu_backward<T: Real>(
    d_act: &[T],
    act: &[T],
    xhat: &[T],
    inv_std: &[T],
    batch: usize,
    channels: usize,
    plane: usize,
    gain: &[T],
    d_gain: &mut [T],
    d_bias: &mut [T],
) -> Vec<T> {
    let mut d_x = vec![T::ZERO; d_act.len()];
    let n = T::from_f64((batch * plane) as f64);
    let dy = |i: usize| if act[i] > T::ZERO { d_act[i] } else { T::ZERO };
    for c in 0..channels {
        let mut sum_dy = T::ZERO;
        let mut sum_dy_xhat = T::ZERO;
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            for i in off..off + plane {
                let g = dy(i);
                sum_dy += g;
                sum_dy_xhat += g * xhat[i];
            }
        }
        d_bias[c] += sum_dy;
        d_gain[c] += sum_dy_xhat;
        let scale = gain[c] * inv_std[c] / n;
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            for i in off..off + plane {
                d_x[i] = scale * (n * dy(i) - sum_dy - xhat[i] * sum_dy_xhat);
            }
        }
    }
    d_x
}

/// `out[b, j] = bias[j] + Σ_k weight[j, k] · x[b, k]`
fn linear<T: Real>(x: &[T], batch: usize, n_in: usize, weight: &[T], bias: &[T]) -> Vec<T> {
    let n_out = bias.len();
    let mut out = vec![T::ZERO; batch * n_out];
    for b in 0..batch {
        let xb = &x[b * n_in..][..n_in];
        for j in 0..n_out {
            let wj = &weight[j * n_in..][..n_in];
            let mut acc = bias[j];
            for k in 0..n_in {
                acc += wj[k] * xb[k];
            }
            out[b * n_out + j] = acc;
        }
    }
    out
}

fn linear_backward<T: Real>(
    x: &[T],
    batch: usize,
    n_in: usize,
    weight: &[T],
    d_out: &[T],
    d_weight: &mut [T],
    d_bias: &mut [T],
) -> Vec<T> {
    let n_out = d_bias.len();
    let mut d_x = vec![T::ZERO; batch * n_in];
    for b in 0..batch {
        let xb = &x[b * n_in..][..n_in];
        let dxb = &mut d_x[b * n_in..][..n_in];
        for j in 0..n_out {
            let g = d_out[b * n_out + j];
            if g == T::ZERO {
                continue;
            }
            d_bias[j] += g;
            let wj = &weight[j * n_in..][..n_in];
            let dwj = &mut d_weight[j * n_in..][..n_in];
            for k in 0..n_in {
                dwj[k] += g * xb[k];
                dxb[k] += g * wj[k];
            }
        }
    }
    d_x
}

/// Huber loss of a residual.
pub fn huber<T: Real>(r: T) -> T {
    let delta = T::from_f64(HUBER_DELTA);
    let a = r.abs();
    if a <= delta {
        T::from_f64(0.5) * r * r
    } else {
        delta * (a - T::from_f64(0.5) * delta)
    }
}

/// Derivative of [`huber`]: the residual clipped to `[-δ, δ]`.
pub fn huber_grad<T: Real>(r: T) -> T {
    let delta = T::from_f64(HUBER_DELTA);
    if r > delta {
        delta
    } else if r < -delta {
        -delta
    } else {
        r
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: Real>(values: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if !(v > b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

impl<T: Real> QNetwork<T> {
    /// Uniform `±sqrt(1/fan_in)` weights, zero biases, identity batch norm.
    pub fn new<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::zeros(&config);
        let mut fill = |w: &mut [T], fan_in: usize| {
            let bound = libm::sqrt(1.0 / fan_in as f64);
            for v in w {
                *v = T::from_f64(rng.gen_range(-bound..bound));
            }
        };
        fill(&mut params.conv1_weight, KERNEL * KERNEL);
        fill(&mut params.conv2_weight, CONV1_CHANNELS * KERNEL * KERNEL);
        fill(&mut params.fc1_weight, config.flatten_len());
        fill(&mut params.fc2_weight, config.hidden);
        params.bn1_gain.fill(T::ONE);
        params.bn2_gain.fill(T::ONE);
        Ok(QNetwork {
            config,
            params,
            bn1: BatchNormStats::new(CONV1_CHANNELS),
            bn2: BatchNormStats::new(CONV2_CHANNELS),
        })
    }

    /// Architecture of this network.
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Trainable parameters.
    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    /// Mutable trainable parameters.
    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Running statistics of both batch-norm layers.
    pub fn bn_stats(&self) -> (&BatchNormStats<T>, &BatchNormStats<T>) {
        (&self.bn1, &self.bn2)
    }

    /// Mutable running statistics of both batch-norm layers.
    pub fn bn_stats_mut(&mut self) -> (&mut BatchNormStats<T>, &mut BatchNormStats<T>) {
        (&mut self.bn1, &mut self.bn2)
    }

    /// Every stored array in serialization order: each layer's parameters,
    /// with running mean and variance right after the batch-norm bias.
    pub fn arrays(&self) -> [(&'static str, &[T]); 16] {
        let p = &self.params;
        [
            ("conv1_weight", &p.conv1_weight),
            ("conv1_bias", &p.conv1_bias),
            ("bn1_gain", &p.bn1_gain),
            ("bn1_bias", &p.bn1_bias),
            ("bn1_running_mean", &self.bn1.mean),
            ("bn1_running_var", &self.bn1.var),
            ("conv2_weight", &p.conv2_weight),
            ("conv2_bias", &p.conv2_bias),
            ("bn2_gain", &p.bn2_gain),
            ("bn2_bias", &p.bn2_bias),
            ("bn2_running_mean", &self.bn2.mean),
            ("bn2_running_var", &self.bn2.var),
            ("fc1_weight", &p.fc1_weight),
            ("fc1_bias", &p.fc1_bias),
            ("fc2_weight", &p.fc2_weight),
            ("fc2_bias", &p.fc2_bias),
        ]
    }

    /// Mutable view of [`QNetwork::arrays`], same order.
    pub fn arrays_mut(&mut self) -> [&mut [T]; 16] {
        let p = &mut self.params;
        [
            &mut p.conv1_weight,
            &mut p.conv1_bias,
            &mut p.bn1_gain,
            &mut p.bn1_bias,
            &mut self.bn1.mean,
            &mut self.bn1.var,
            &mut p.conv2_weight,
            &mut p.conv2_bias,
            &mut p.bn2_gain,
            &mut p.bn2_bias,
            &mut self.bn2.mean,
            &mut self.bn2.var,
            &mut p.fc1_weight,
            &mut p.fc1_bias,
            &mut p.fc2_weight,
            &mut p.fc2_bias,
        ]
    }

    /// Overwrites this network with a bit-identical copy of `src`.
    pub fn copy_from(&mut self, src: &QNetwork<T>) {
        self.clone_from(src);
    }

    fn conv_shapes(&self) -> (ConvShape, ConvShape) {
        let c = &self.config;
        let (h1, w1) = c.conv1_size();
        let (h2, w2) = c.conv2_size();
        (
            ConvShape {
                cin: 1,
                cout: CONV1_CHANNELS,
                h: c.height,
                w: c.width,
                oh: h1,
                ow: w1,
                stride: c.stride,
                pad: c.padding,
            },
            ConvShape {
                cin: CONV1_CHANNELS,
                cout: CONV2_CHANNELS,
                h: h1,
                w: w1,
                oh: h2,
                ow: w2,
                stride: c.stride,
                pad: c.padding,
            },
        )
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<usize> {
        let s = input.shape();
        if s.len() != 4 || s[1] != 1 || s[2] != self.config.height || s[3] != self.config.width || s[0] == 0 {
            return Err(Error::invalid(format!(
                "expected input [B, 1, {}, {}], got {s:?}",
                self.config.height, self.config.width
            )));
        }
        Ok(s[0])
    }

    fn run(&self, input: &Tensor<T>, mode: Mode, bn1: &mut BatchNormStats<T>, bn2: &mut BatchNormStats<T>) -> Result<Trace<T>> {
        let batch = self.check_input(input)?;
        let p = &self.params;
        let (s1, s2) = self.conv_shapes();
        let c1 = s1.forward(input.data(), batch, &p.conv1_weight, &p.conv1_bias);
        check_finite(&c1, "conv1")?;
        let (xhat1, inv_std1, act1) =
            batch_norm_relu(&c1, batch, CONV1_CHANNELS, s1.oh * s1.ow, &p.bn1_gain, &p.bn1_bias, bn1, mode);
        check_finite(&act1, "bn1")?;
        let c2 = s2.forward(&act1, batch, &p.conv2_weight, &p.conv2_bias);
        check_finite(&c2, "conv2")?;
        let (xhat2, inv_std2, act2) =
            batch_norm_relu(&c2, batch, CONV2_CHANNELS, s2.oh * s2.ow, &p.bn2_gain, &p.bn2_bias, bn2, mode);
        check_finite(&act2, "bn2")?;
        let flat = self.config.flatten_len();
        let mut hidden = linear(&act2, batch, flat, &p.fc1_weight, &p.fc1_bias);
        for v in hidden.iter_mut() {
            if !(*v > T::ZERO) {
                *v = T::ZERO;
            }
        }
        check_finite(&hidden, "fc1")?;
        let q = linear(&hidden, batch, self.config.hidden, &p.fc2_weight, &p.fc2_bias);
        check_finite(&q, "fc2")?;
        Ok(Trace {
            batch,
            input: input.data().to_vec(),
            xhat1,
            inv_std1,
            act1,
            xhat2,
            inv_std2,
            act2,
            hidden,
            q,
        })
    }

    /// Q-values `[B, actions]` for a `[B, 1, H, W]` batch. Train mode
    /// normalizes with batch statistics and updates the running statistics.
    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (mut bn1, mut bn2) = (self.bn1.clone(), self.bn2.clone());
        let trace = self.run(input, mode, &mut bn1, &mut bn2)?;
        if mode == Mode::Train {
            self.bn1 = bn1;
            self.bn2 = bn2;
        }
        Tensor::new(vec![trace.batch, self.config.actions], trace.q)
    }

    /// Eval-mode forward on shared parameters.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (mut bn1, mut bn2) = (self.bn1.clone(), self.bn2.clone());
        let trace = self.run(input, Mode::Eval, &mut bn1, &mut bn2)?;
        Tensor::new(vec![trace.batch, self.config.actions], trace.q)
    }

    /// Eval-mode Q-values of a single frame.
    pub fn q_values(&self, frame: &EventFrame) -> Result<Vec<T>> {
        Ok(self.predict(&Tensor::from_frames([frame])?)?.data)
    }

    /// Greedy action for a single frame.
    pub fn greedy_action(&self, frame: &EventFrame) -> Result<usize> {
        Ok(argmax(&self.q_values(frame)?).expect("at least one action"))
    }

    /// Mean Huber loss of `Q(s_b, a_b) - y_b` over the batch and its exact
    /// gradient w.r.t. every trainable parameter. Runs a train-mode forward,
    /// so running statistics are updated; eval mode is rejected.
    pub fn loss_and_gradients(
        &mut self,
        input: &Tensor<T>,
        actions: &[usize],
        targets: &[T],
        mode: Mode,
    ) -> Result<(T, ParamSet<T>)> {
        if mode != Mode::Train {
            return Err(Error::state("gradients require train mode"));
        }
        let batch = self.check_input(input)?;
        if actions.len() != batch || targets.len() != batch {
            return Err(Error::invalid(format!(
                "batch of {batch} needs {batch} actions and targets, got {} and {}",
                actions.len(),
                targets.len()
            )));
        }
        if let Some(a) = actions.iter().find(|&&a| a >= self.config.actions) {
            return Err(Error::invalid(format!("action {a} out of range")));
        }
        let (mut bn1, mut bn2) = (self.bn1.clone(), self.bn2.clone());
        let tr = self.run(input, Mode::Train, &mut bn1, &mut bn2)?;
        self.bn1 = bn1;
        self.bn2 = bn2;

        let a_count = self.config.actions;
        let hidden_n = self.config.hidden;
        let flat = self.config.flatten_len();
        let inv_b = T::ONE / T::from_f64(batch as f64);
        let mut loss = T::ZERO;
        let mut d_q = vec![T::ZERO; batch * a_count];
        for b in 0..batch {
            let r = tr.q[b * a_count + actions[b]] - targets[b];
            loss += huber(r);
            d_q[b * a_count + actions[b]] = huber_grad(r) * inv_b;
        }
        loss *= inv_b;

        let p = &self.params;
        let mut g = p.zeros_like();
        let mut d_hidden = linear_backward(
            &tr.hidden,
            batch,
            hidden_n,
            &p.fc2_weight,
            &d_q,
            &mut g.fc2_weight,
            &mut g.fc2_bias,
        );
        for (d, h) in d_hidden.iter_mut().zip(&tr.hidden) {
            if !(*h > T::ZERO) {
                *d = T::ZERO;
            }
        }
        let d_act2 = linear_backward(
            &tr.act2,
            batch,
            flat,
            &p.fc1_weight,
            &d_hidden,
            &mut g.fc1_weight,
            &mut g.fc1_bias,
        );
        let (s1, s2) = self.conv_shapes();
        let d_c2 = batch_norm_relu_backward(
            &d_act2,
            &tr.act2,
            &tr.xhat2,
            &tr.inv_std2,
            batch,
            CONV2_CHANNELS,
            s2.oh * s2.ow,
            &p.bn2_gain,
            &mut g.bn2_gain,
            &mut g.bn2_bias,
        );
        let d_act1 = s2
            .backward(&tr.act1, batch, &p.conv2_weight, &d_c2, &mut g.conv2_weight, &mut g.conv2_bias, true)
            .expect("input gradient requested");
        let d_c1 = batch_norm_relu_backward(
            &d_act1,
            &tr.act1,
            &tr.xhat1,
            &tr.inv_std1,
            batch,
            CONV1_CHANNELS,
            s1.oh * s1.ow,
            &p.bn1_gain,
            &mut g.bn1_gain,
            &mut g.bn1_bias,
        );
        s1.backward(&tr.input, batch, &p.conv1_weight, &d_c1, &mut g.conv1_weight, &mut g.conv1_bias, false);

        check_finite(&[loss], "loss")?;
        for s in g.slices() {
            check_finite(s, "backward")?;
        }
        Ok((loss, g))
    }
}
