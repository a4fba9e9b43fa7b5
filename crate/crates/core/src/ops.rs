//! Forward and backward kernels over [`Tensor`]s.
//!
//! The public functions here are the plain (non-recording) forms of every
//! differentiable operation. [`crate::tape::Tape`] records the same kernels
//! and uses the `*_backward` helpers when replaying.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const BN_EPS: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    /// Standard `k×k` convolution with "same"-style padding `k/2`.
    pub fn standard(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding: kernel / 2,
            groups: 1,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::standard(in_channels, out_channels, 1, 1)
    }

    pub fn depthwise(channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            groups: channels,
            ..Self::standard(channels, channels, kernel, stride)
        }
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.out_channels == self.in_channels
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.groups == 1
    }

    pub fn weight_shape(&self) -> Shape {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel_h,
            self.kernel_w,
        ]
    }

    /// Scalars in the weight tensor (bias excluded).
    pub fn weight_count(&self) -> usize {
        self.weight_shape().iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("kernel_h", self.kernel_h),
            ("kernel_w", self.kernel_w),
            ("stride", self.stride),
            ("groups", self.groups),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::ConvSpec(format!("{name} must be positive")));
        }
        if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return Err(Error::ConvSpec(format!(
                "groups {} must divide in_channels {} and out_channels {}",
                self.groups, self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel_h || pw < self.kernel_w {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "padded input {ph}x{pw} smaller than kernel {}x{}",
                    self.kernel_h, self.kernel_w
                ),
            ));
        }
        Ok((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }
}

fn check_conv(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Shape> {
    spec.validate()?;
    if x.channels() != spec.in_channels {
        return Err(Error::shape(
            "conv2d",
            format!(
                "input channels {} != spec in_channels {}",
                x.channels(),
                spec.in_channels
            ),
        ));
    }
    let ws = spec.weight_shape();
    if weight.shape() != ws {
        let dim = ["out_channels", "in_channels/groups", "kernel_h", "kernel_w"]
            [(0..4).find(|&i| weight.shape()[i] != ws[i]).unwrap_or(0)];
        return Err(Error::shape(
            "conv2d",
            format!("weight {dim}: expected shape {ws:?}, got {:?}", weight.shape()),
        ));
    }
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return Err(Error::shape(
                "conv2d",
                format!("bias length {} != out_channels {}", b.len(), spec.out_channels),
            ));
        }
    }
    let (ho, wo) = spec.output_hw(x.height(), x.width())?;
    Ok([x.batch(), spec.out_channels, ho, wo])
}

struct ConvGeometry {
    cin_g: usize,
    cout_g: usize,
    k: usize,
    p: usize,
    h: usize,
    w: usize,
    wo: usize,
}

impl ConvGeometry {
    fn new(x: &Tensor, spec: &ConvSpec, out: Shape) -> Self {
        let cin_g = spec.in_channels / spec.groups;
        Self {
            cin_g,
            cout_g: spec.out_channels / spec.groups,
            k: cin_g * spec.kernel_h * spec.kernel_w,
            p: out[2] * out[3],
            h: x.height(),
            w: x.width(),
            wo: out[3],
        }
    }
}

/// Unfold the input channels of one group of one batch item into a `K×P`
/// column matrix.
fn im2col(src: &[f64], g: &ConvGeometry, spec: &ConvSpec, cols: &mut [f64]) {
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    for ci in 0..g.cin_g {
        let plane = &src[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &mut cols[((ci * kh + ki) * kw + kj) * g.p..][..g.p];
                for (pi, slot) in row.iter_mut().enumerate() {
                    let ih = (pi / g.wo * spec.stride + ki) as isize - spec.padding as isize;
                    let iw = (pi % g.wo * spec.stride + kj) as isize - spec.padding as isize;
                    *slot = if ih >= 0 && iw >= 0 && (ih as usize) < g.h && (iw as usize) < g.w {
                        plane[ih as usize * g.w + iw as usize]
                    } else {
                        0.0
                    };
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeometry, spec: &ConvSpec, dst: &mut [f64]) {
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    for ci in 0..g.cin_g {
        let plane = &mut dst[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &cols[((ci * kh + ki) * kw + kj) * g.p..][..g.p];
                for (pi, &v) in row.iter().enumerate() {
                    let ih = (pi / g.wo * spec.stride + ki) as isize - spec.padding as isize;
                    let iw = (pi % g.wo * spec.stride + kj) as isize - spec.padding as isize;
                    if ih >= 0 && iw >= 0 && (ih as usize) < g.h && (iw as usize) < g.w {
                        plane[ih as usize * g.w + iw as usize] += v;
                    }
                }
            }
        }
    }
}

fn view(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("matrix view matches slice length")
}

fn view_mut(data: &mut [f64], rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("matrix view matches slice length")
}

/// Grouped 2-D convolution with zero padding.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    let out_shape = check_conv(x, weight, bias, spec)?;
    let g = ConvGeometry::new(x, spec, out_shape);
    let mut out = Tensor::zeros(out_shape);
    let mut cols = vec![0.0; g.k * g.p];
    let in_item = spec.in_channels * g.h * g.w;
    let out_item = spec.out_channels * g.p;
    for n in 0..x.batch() {
        for grp in 0..spec.groups {
            let src = &x.data()[n * in_item + grp * g.cin_g * g.h * g.w..];
            im2col(src, &g, spec, &mut cols);
            let wg = &weight.data()[grp * g.cout_g * g.k..(grp + 1) * g.cout_g * g.k];
            let dst = &mut out.data_mut()[n * out_item + grp * g.cout_g * g.p..][..g.cout_g * g.p];
            general_mat_mul(
                1.0,
                &view(wg, g.cout_g, g.k),
                &view(&cols, g.k, g.p),
                0.0,
                &mut view_mut(dst, g.cout_g, g.p),
            );
        }
        if let Some(b) = bias {
            let item = &mut out.data_mut()[n * out_item..(n + 1) * out_item];
            for (c, plane) in item.chunks_mut(g.p).enumerate() {
                plane.iter_mut().for_each(|v| *v += b.data()[c]);
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
    dy: &[f64],
    out_shape: Shape,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let g = ConvGeometry::new(x, spec, out_shape);
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; weight.len()];
    let mut db = vec![0.0; spec.out_channels];
    let mut cols = vec![0.0; g.k * g.p];
    let mut dcols = vec![0.0; g.k * g.p];
    let in_item = spec.in_channels * g.h * g.w;
    let out_item = spec.out_channels * g.p;
    for n in 0..x.batch() {
        for grp in 0..spec.groups {
            let src = &x.data()[n * in_item + grp * g.cin_g * g.h * g.w..];
            im2col(src, &g, spec, &mut cols);
            let dyg = &dy[n * out_item + grp * g.cout_g * g.p..][..g.cout_g * g.p];
            let wrange = grp * g.cout_g * g.k..(grp + 1) * g.cout_g * g.k;
            general_mat_mul(
                1.0,
                &view(dyg, g.cout_g, g.p),
                &view(&cols, g.k, g.p).t(),
                1.0,
                &mut view_mut(&mut dw[wrange.clone()], g.cout_g, g.k),
            );
            general_mat_mul(
                1.0,
                &view(&weight.data()[wrange], g.cout_g, g.k).t(),
                &view(dyg, g.cout_g, g.p),
                0.0,
                &mut view_mut(&mut dcols, g.k, g.p),
            );
            let dst = &mut dx[n * in_item + grp * g.cin_g * g.h * g.w..];
            col2im(&dcols, &g, spec, dst);
        }
        for (c, plane) in dy[n * out_item..(n + 1) * out_item].chunks(g.p).enumerate() {
            db[c] += plane.iter().sum::<f64>();
        }
    }
    (dx, dw, db)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    GlobalAvg,
    GlobalMax,
    WindowMax,
}

/// Pooling. Global kinds ignore `window`/`stride`; window-max requires
/// `window == stride` and truncates edge windows (ceil mode).
pub fn pool(x: &Tensor, kind: PoolKind, window: usize, stride: usize) -> Result<Tensor> {
    Ok(match kind {
        PoolKind::GlobalAvg => global_avg(x),
        PoolKind::GlobalMax => global_max(x).0,
        PoolKind::WindowMax => {
            if window != stride {
                return Err(Error::shape(
                    "pool",
                    format!("window-max needs window == stride, got {window} and {stride}"),
                ));
            }
            window_max(x, window)?.0
        }
    })
}

pub(crate) fn global_avg(x: &Tensor) -> Tensor {
    let [n, c, _, _] = x.shape();
    let p = x.plane();
    let data = x
        .data()
        .chunks(p)
        .map(|plane| plane.iter().sum::<f64>() / p as f64)
        .collect();
    Tensor::from_vec([n, c, 1, 1], data).expect("pooled shape")
}

/// Global max and the flat input index of each maximum (first occurrence).
pub(crate) fn global_max(x: &Tensor) -> (Tensor, Vec<usize>) {
    let [n, c, _, _] = x.shape();
    let p = x.plane();
    let mut idx = Vec::with_capacity(n * c);
    let mut data = Vec::with_capacity(n * c);
    for (k, plane) in x.data().chunks(p).enumerate() {
        let (best, v) = argmax(plane);
        idx.push(k * p + best);
        data.push(v);
    }
    (Tensor::from_vec([n, c, 1, 1], data).expect("pooled shape"), idx)
}

fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    (best, values[best])
}

/// Non-overlapping `k×k` max pooling in ceil mode.
pub(crate) fn window_max(x: &Tensor, k: usize) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = x.shape();
    if k == 0 {
        return Err(Error::shape("pool", "window must be positive"));
    }
    if k > h && k > w {
        return Err(Error::shape(
            "pool",
            format!("window {k} exceeds both spatial dims {h}x{w}; use global-max"),
        ));
    }
    let (ho, wo) = (h.div_ceil(k), w.div_ceil(k));
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut idx = Vec::with_capacity(n * c * ho * wo);
    for (plane_i, plane) in x.data().chunks(h * w).enumerate() {
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = (oh * k) * w + ow * k;
                for ih in oh * k..((oh + 1) * k).min(h) {
                    for iw in ow * k..((ow + 1) * k).min(w) {
                        if plane[ih * w + iw] > plane[best] {
                            best = ih * w + iw;
                        }
                    }
                }
                out.push(plane[best]);
                idx.push(plane_i * h * w + best);
            }
        }
    }
    Ok((Tensor::from_vec([n, c, ho, wo], out)?, idx))
}

/// Nearest-neighbour enlargement by an integer factor.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::shape("upsample", "factor must be at least 1"));
    }
    upsample_to(x, x.height() * factor, x.width() * factor)
}

/// Nearest-neighbour resize to `target_h × target_w`; output cell `(i, j)`
/// reads source cell `(i·h/target_h, j·w/target_w)` (floored).
pub fn upsample_to(x: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor> {
    Ok(upsample_to_indexed(x, target_h, target_w)?.0)
}

pub(crate) fn upsample_to_indexed(
    x: &Tensor,
    target_h: usize,
    target_w: usize,
) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = x.shape();
    if target_h < h || target_w < w {
        return Err(Error::shape(
            "upsample",
            format!("target {target_h}x{target_w} smaller than source {h}x{w}"),
        ));
    }
    let mut out = Vec::with_capacity(n * c * target_h * target_w);
    let mut idx = Vec::with_capacity(out.capacity());
    for plane_i in 0..n * c {
        for i in 0..target_h {
            let si = i * h / target_h;
            for j in 0..target_w {
                let src = plane_i * h * w + si * w + j * w / target_w;
                out.push(x.data()[src]);
                idx.push(src);
            }
        }
    }
    Ok((Tensor::from_vec([n, c, target_h, target_w], out)?, idx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Gelu,
    Sigmoid,
    Silu,
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(v: f64) -> f64 {
    0.5 * (1.0 + libm::erf(v / std::f64::consts::SQRT_2))
}

fn normal_pdf(v: f64) -> f64 {
    (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Gelu => v * normal_cdf(v),
            Activation::Sigmoid => sigmoid(v),
            Activation::Silu => v * sigmoid(v),
        }
    }

    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => normal_cdf(v) + v * normal_pdf(v),
            Activation::Sigmoid => {
                let s = sigmoid(v);
                s * (1.0 - s)
            }
            Activation::Silu => {
                let s = sigmoid(v);
                s * (1.0 + v * (1.0 - s))
            }
        }
    }
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    x.map(|v| kind.apply(v))
}

/// Channels `[start, start + len)` of every batch item.
pub(crate) fn channel_slice(x: &Tensor, start: usize, len: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    let p = h * w;
    let mut out = Vec::with_capacity(n * len * p);
    for b in 0..n {
        out.extend_from_slice(&x.data()[(b * c + start) * p..(b * c + start + len) * p]);
    }
    Tensor::from_vec([n, len, h, w], out).expect("slice shape")
}

/// Split into four equal channel groups.
pub fn channel_split4(x: &Tensor) -> Result<[Tensor; 4]> {
    let c = x.channels();
    if c % 4 != 0 {
        return Err(Error::Divisibility {
            channels: c,
            divisor: 4,
            context: "channel_split4",
        });
    }
    let q = c / 4;
    Ok(std::array::from_fn(|i| channel_slice(x, i * q, q)))
}

pub fn channel_concat(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("channel_concat", "no parts"))?;
    let [n, _, h, w] = first.shape();
    for p in parts {
        let [pn, _, ph, pw] = p.shape();
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::shape(
                "channel_concat",
                format!("part shape {:?} incompatible with {:?}", p.shape(), first.shape()),
            ));
        }
    }
    let c: usize = parts.iter().map(Tensor::channels).sum();
    let plane = h * w;
    let mut out = Vec::with_capacity(n * c * plane);
    for b in 0..n {
        for p in parts {
            let pc = p.channels();
            out.extend_from_slice(&p.data()[b * pc * plane..(b + 1) * pc * plane]);
        }
    }
    Tensor::from_vec([n, c, h, w], out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
}

/// How `b` is laid against `a` in a binary op.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// `b` is `N×C×1×1`, repeated over the spatial positions of `a`.
    Channel,
}

pub(crate) fn broadcast_kind(a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb {
        Ok(Broadcast::Same)
    } else if sb[0] == sa[0] && sb[1] == sa[1] && sb[2] == 1 && sb[3] == 1 {
        Ok(Broadcast::Channel)
    } else {
        Err(Error::shape(
            "elementwise",
            format!("cannot combine {sa:?} with {sb:?}"),
        ))
    }
}

pub fn elementwise(a: &Tensor, b: &Tensor, kind: Elementwise) -> Result<Tensor> {
    let bc = broadcast_kind(a, b)?;
    let p = a.plane();
    let f = match kind {
        Elementwise::Add => |x: f64, y: f64| x + y,
        Elementwise::Mul => |x: f64, y: f64| x * y,
    };
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let y = match bc {
                Broadcast::Same => b.data()[i],
                Broadcast::Channel => b.data()[i / p],
            };
            f(x, y)
        })
        .collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn negate(x: &Tensor) -> Tensor {
    x.map(|v| -v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    /// `running ← momentum·running + (1 − momentum)·batch`.
    pub fn update(&mut self, batch_mean: &[f64], batch_var: &[f64]) {
        for (r, &b) in self.mean.iter_mut().zip(batch_mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
        for (r, &b) in self.var.iter_mut().zip(batch_var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
    }
}

pub(crate) struct BnForward {
    pub out: Tensor,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn check_bn(x: &Tensor, gamma: &[f64], beta: &[f64]) -> Result<()> {
    if gamma.len() != x.channels() || beta.len() != x.channels() {
        return Err(Error::shape(
            "batch_norm",
            format!(
                "gamma/beta lengths {}/{} != channels {}",
                gamma.len(),
                beta.len(),
                x.channels()
            ),
        ));
    }
    Ok(())
}

/// Batch normalization with biased batch variance (train) or the supplied
/// statistics (eval).
pub(crate) fn batch_norm_forward(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    stats: Option<(&[f64], &[f64])>,
) -> Result<BnForward> {
    check_bn(x, gamma, beta)?;
    let [n, c, _, _] = x.shape();
    let p = x.plane();
    let m = (n * p) as f64;
    let (mean, var) = match stats {
        Some((mean, var)) => (mean.to_vec(), var.to_vec()),
        None => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for (k, plane) in x.data().chunks(p).enumerate() {
                mean[k % c] += plane.iter().sum::<f64>();
            }
            mean.iter_mut().for_each(|v| *v /= m);
            for (k, plane) in x.data().chunks(p).enumerate() {
                let mu = mean[k % c];
                var[k % c] += plane.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
            }
            var.iter_mut().for_each(|v| *v /= m);
            (mean, var)
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for (k, plane) in x.data().chunks(p).enumerate() {
        let ch = k % c;
        for (i, &v) in plane.iter().enumerate() {
            let h = (v - mean[ch]) * inv_std[ch];
            xhat[k * p + i] = h;
            out[k * p + i] = gamma[ch] * h + beta[ch];
        }
    }
    Ok(BnForward {
        out: Tensor::from_vec(x.shape(), out)?,
        xhat,
        inv_std,
        mean,
        var,
    })
}

/// Returns `(dx, dgamma, dbeta)`. `batch_stats` selects the train-mode rule
/// where mean and variance depend on `x`.
pub(crate) fn batch_norm_backward(
    shape: Shape,
    gamma: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    dy: &[f64],
    batch_stats: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = shape;
    let p = h * w;
    let m = (n * p) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (k, (g, xh)) in dy.chunks(p).zip(xhat.chunks(p)).enumerate() {
        let ch = k % c;
        dbeta[ch] += g.iter().sum::<f64>();
        dgamma[ch] += g.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
    }
    let mut dx = vec![0.0; dy.len()];
    for (k, (g, xh)) in dy.chunks(p).zip(xhat.chunks(p)).enumerate() {
        let ch = k % c;
        let scale = gamma[ch] * inv_std[ch];
        for i in 0..p {
            dx[k * p + i] = if batch_stats {
                scale * (g[i] - dbeta[ch] / m - xh[i] * dgamma[ch] / m)
            } else {
                scale * g[i]
            };
        }
    }
    (dx, dgamma, dbeta)
}

/// Batch normalization over N, H, W per channel. Train mode normalizes by
/// batch statistics and folds them into `running`; eval mode reads `running`.
pub fn batch_norm(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running: &mut RunningStats,
    mode: Mode,
) -> Result<Tensor> {
    match mode {
        Mode::Train => {
            let f = batch_norm_forward(x, gamma, beta, None)?;
            running.update(&f.mean, &f.var);
            Ok(f.out)
        }
        Mode::Eval => Ok(batch_norm_forward(x, gamma, beta, Some((&running.mean, &running.var)))?.out),
    }
}
