//! Trainable layer kernels: valid 2-D convolution, ReLU, 2x2 max pooling and
//! fully-connected layers with exact backward passes, plus SGD with momentum.
//!
//! All kernels are generic over [`Real`] so the same code runs in `f32` for
//! training and inference and in `f64` for finite-difference checks.
//! Convolutions are cross-correlations lowered to a matrix product
//! (im2col + GEMM).

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Floating-point scalar usable by the layer kernels.
pub trait Real: Float + Default + Debug + Send + Sync + Sum + AddAssign + 'static {
    /// `C = alpha * A * B + beta * C` with arbitrary element strides.
    ///
    /// # Safety
    /// The pointers and strides must describe valid, non-overlapping
    /// `m x k`, `k x n` and `m x n` matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn lit(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("representable literal")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Row-major matrix view `(rows, cols, row stride, col stride)` over a slice.
#[derive(Clone, Copy)]
struct Mat<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T> Mat<'a, T> {
    fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols, cs: 1 }
    }

    fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn fits(&self) -> bool {
        self.rows == 0
            || self.cols == 0
            || (self.rows - 1) * self.rs + (self.cols - 1) * self.cs < self.data.len()
    }
}

/// `out (m x n, row-major) = beta * out + a * b`.
fn gemm<T: Real>(a: Mat<'_, T>, b: Mat<'_, T>, beta: T, out: &mut [T]) {
    assert_eq!(a.cols, b.rows, "inner dimensions");
    assert!(a.fits() && b.fits(), "matrix views out of bounds");
    assert!(out.len() >= a.rows * b.cols, "output too small");
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    // SAFETY: bounds of all three views were checked above and `out` is a
    // distinct mutable borrow.
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            T::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            out.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
}

/// Dense activation tensor, shape `(channels, height, width)`.
///
/// Flat vectors use shape `(len, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "{} values for tensor {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn flat(data: Vec<T>) -> Self {
        Self {
            channels: data.len(),
            height: 1,
            width: 1,
            data,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Weights shaped `(out_ch, in_ch, kernel, kernel)`.
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
    },
    /// Weights shaped `(outputs, inputs)`, row-major.
    Dense { inputs: usize, outputs: usize },
}

impl LayerKind {
    pub fn weight_len(&self) -> usize {
        match *self {
            LayerKind::Conv {
                in_ch,
                out_ch,
                kernel,
            } => out_ch * in_ch * kernel * kernel,
            LayerKind::Dense { inputs, outputs } => inputs * outputs,
        }
    }

    pub fn bias_len(&self) -> usize {
        match *self {
            LayerKind::Conv { out_ch, .. } => out_ch,
            LayerKind::Dense { outputs, .. } => outputs,
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerKind::Conv { in_ch, kernel, .. } => in_ch * kernel * kernel,
            LayerKind::Dense { inputs, .. } => inputs,
        }
    }
}

/// Weights, biases and their momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub kind: LayerKind,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub weight_velocity: Vec<T>,
    pub bias_velocity: Vec<T>,
}

impl<T: Real> LayerParams<T> {
    pub fn zeros(kind: LayerKind) -> Self {
        Self::from_parts(kind, vec![T::zero(); kind.weight_len()], vec![T::zero(); kind.bias_len()])
            .expect("lengths derived from kind")
    }

    pub fn from_parts(kind: LayerKind, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weights.len() != kind.weight_len() || bias.len() != kind.bias_len() {
            return Err(Error::shape(format!(
                "{kind:?} expects {} weights and {} biases, got {} and {}",
                kind.weight_len(),
                kind.bias_len(),
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            kind,
            weight_velocity: vec![T::zero(); weights.len()],
            bias_velocity: vec![T::zero(); bias.len()],
            weights,
            bias,
        })
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Same parameters in another precision; momentum buffers are converted too.
    pub fn cast<U: Real>(&self) -> LayerParams<U> {
        let conv = |v: &[T]| v.iter().map(|&x| U::lit(x.to_f64_lossy())).collect::<Vec<U>>();
        LayerParams {
            kind: self.kind,
            weights: conv(&self.weights),
            bias: conv(&self.bias),
            weight_velocity: conv(&self.weight_velocity),
            bias_velocity: conv(&self.bias_velocity),
        }
    }
}

/// Gradients with the same layout as [`LayerParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> LayerGrads<T> {
    pub fn zeros(kind: LayerKind) -> Self {
        Self {
            weights: vec![T::zero(); kind.weight_len()],
            bias: vec![T::zero(); kind.bias_len()],
        }
    }

    pub fn add_assign(&mut self, other: &LayerGrads<T>) {
        for (a, &b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, &b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            *v = *v * s;
        }
    }
}

/// Upper bound on im2col buffer size per band, in elements.
const COL_BUDGET: usize = 1 << 22;

fn conv_dims<T: Real>(x: &Tensor<T>, p: &LayerParams<T>) -> Result<(usize, usize, usize, usize)> {
    let LayerKind::Conv {
        in_ch,
        out_ch,
        kernel,
    } = p.kind
    else {
        return Err(Error::invalid("convolution needs conv parameters"));
    };
    if x.channels != in_ch {
        return Err(Error::shape(format!(
            "conv expects {in_ch} input channels, got {}",
            x.channels
        )));
    }
    if x.height < kernel || x.width < kernel {
        return Err(Error::shape(format!(
            "{}x{} input smaller than {kernel}x{kernel} kernel",
            x.height, x.width
        )));
    }
    Ok((out_ch, kernel, x.height - kernel + 1, x.width - kernel + 1))
}

/// Fills `col` (rows `(ci, ky, kx)`, columns `(oy - row0, ox)`) for output rows
/// `row0..row0 + rows`.
fn im2col<T: Real>(x: &Tensor<T>, kernel: usize, row0: usize, rows: usize, ow: usize, col: &mut [T]) {
    let n = rows * ow;
    for ci in 0..x.channels {
        let plane = x.plane(ci);
        for ky in 0..kernel {
            for kx in 0..kernel {
                let r = (ci * kernel + ky) * kernel + kx;
                let dst = &mut col[r * n..(r + 1) * n];
                for oy in 0..rows {
                    let src = (row0 + oy + ky) * x.width + kx;
                    dst[oy * ow..(oy + 1) * ow].copy_from_slice(&plane[src..src + ow]);
                }
            }
        }
    }
}

fn col2im_add<T: Real>(col: &[T], kernel: usize, oh: usize, ow: usize, gx: &mut Tensor<T>) {
    let n = oh * ow;
    let (h, w) = (gx.height, gx.width);
    for ci in 0..gx.channels {
        let plane = &mut gx.data[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let r = (ci * kernel + ky) * kernel + kx;
                let src = &col[r * n..(r + 1) * n];
                for oy in 0..oh {
                    let dst = &mut plane[(oy + ky) * w + kx..(oy + ky) * w + kx + ow];
                    for (d, &s) in dst.iter_mut().zip(&src[oy * ow..(oy + 1) * ow]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Valid (unpadded) cross-correlation plus per-channel bias.
///
/// Output side is `input side - kernel + 1`.
pub fn conv_forward<T: Real>(x: &Tensor<T>, p: &LayerParams<T>) -> Result<Tensor<T>> {
    let (out_ch, kernel, oh, ow) = conv_dims(x, p)?;
    let kk = x.channels * kernel * kernel;
    let mut out = Tensor::zeros(out_ch, oh, ow);
    let band = (COL_BUDGET / (kk * ow).max(1)).clamp(1, oh);
    let mut col = vec![T::zero(); kk * band * ow];
    let mut tmp = vec![T::zero(); out_ch * band * ow];
    let w = Mat::new(&p.weights, out_ch, kk);
    let mut row0 = 0;
    while row0 < oh {
        let rows = band.min(oh - row0);
        let n = rows * ow;
        im2col(x, kernel, row0, rows, ow, &mut col[..kk * n]);
        gemm(w, Mat::new(&col[..kk * n], kk, n), T::zero(), &mut tmp[..out_ch * n]);
        for co in 0..out_ch {
            let b = p.bias[co];
            let dst = &mut out.data[(co * oh + row0) * ow..(co * oh + row0 + rows) * ow];
            for (d, &s) in dst.iter_mut().zip(&tmp[co * n..(co + 1) * n]) {
                *d = s + b;
            }
        }
        row0 += rows;
    }
    Ok(out)
}

/// Backward pass of [`conv_forward`]. Returns the input gradient (when
/// requested) and the parameter gradients.
pub fn conv_backward<T: Real>(
    x: &Tensor<T>,
    p: &LayerParams<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<(Option<Tensor<T>>, LayerGrads<T>)> {
    let (out_ch, kernel, oh, ow) = conv_dims(x, p)?;
    if grad_out.dims() != (out_ch, oh, ow) {
        return Err(Error::shape("conv output gradient shape"));
    }
    let kk = x.channels * kernel * kernel;
    let n = oh * ow;
    let mut col = vec![T::zero(); kk * n];
    im2col(x, kernel, 0, oh, ow, &mut col);
    let dout = Mat::new(&grad_out.data, out_ch, n);
    let mut grads = LayerGrads::zeros(p.kind);
    gemm(dout, Mat::new(&col, kk, n).t(), T::zero(), &mut grads.weights);
    for co in 0..out_ch {
        grads.bias[co] = grad_out.data[co * n..(co + 1) * n].iter().copied().sum();
    }
    let gx = if need_input_grad {
        gemm(Mat::new(&p.weights, out_ch, kk).t(), dout, T::zero(), &mut col);
        let mut gx = Tensor::zeros(x.channels, x.height, x.width);
        col2im_add(&col, kernel, oh, ow, &mut gx);
        Some(gx)
    } else {
        None
    };
    Ok((gx, grads))
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    Tensor {
        data: x.data.iter().map(|&v| v.max(T::zero())).collect(),
        ..*x
    }
}

pub fn relu_inplace<T: Real>(x: &mut Tensor<T>) {
    for v in &mut x.data {
        *v = v.max(T::zero());
    }
}

/// Passes gradient only where the activation input was strictly positive.
pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    Tensor {
        data: input
            .data
            .iter()
            .zip(&grad_out.data)
            .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
            .collect(),
        ..*input
    }
}

/// Flat argmax indices into the pooled input, one per output element.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    pub input_dims: (usize, usize, usize),
    pub argmax: Vec<u32>,
}

/// Non-overlapping 2x2 max pooling with stride 2. Ties resolve to the first
/// maximum in row-major order.
pub fn maxpool2<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    if !x.height.is_multiple_of(2) || !x.width.is_multiple_of(2) {
        return Err(Error::shape(format!(
            "2x2 pooling needs even sides, got {}x{}",
            x.height, x.width
        )));
    }
    let (oh, ow) = (x.height / 2, x.width / 2);
    let mut out = Tensor::zeros(x.channels, oh, ow);
    let mut argmax = vec![0u32; x.channels * oh * ow];
    for c in 0..x.channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_i = (c * x.height + 2 * oy) * x.width + 2 * ox;
                let mut best = x.data[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = (c * x.height + 2 * oy + dy) * x.width + 2 * ox + dx;
                    if x.data[i] > best {
                        best = x.data[i];
                        best_i = i;
                    }
                }
                let o = (c * oh + oy) * ow + ox;
                out.data[o] = best;
                argmax[o] = best_i as u32;
            }
        }
    }
    Ok((
        out,
        PoolIndices {
            input_dims: x.dims(),
            argmax,
        },
    ))
}

pub fn maxpool2_backward<T: Real>(indices: &PoolIndices, grad_out: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = indices.input_dims;
    let mut gx = Tensor::zeros(c, h, w);
    for (&i, &g) in indices.argmax.iter().zip(&grad_out.data) {
        gx.data[i as usize] += g;
    }
    gx
}

/// Forward-only 2x2 pooling of windows starting at `(ox, oy)`; trailing
/// rows/columns that do not fill a window are dropped. Used by dense
/// inference to split a map into phase fragments.
pub fn maxpool2_at<T: Real>(x: &Tensor<T>, ox: usize, oy: usize) -> Tensor<T> {
    let oh = x.height.saturating_sub(oy) / 2;
    let ow = x.width.saturating_sub(ox) / 2;
    let mut out = Tensor::zeros(x.channels, oh, ow);
    for c in 0..x.channels {
        let plane = x.plane(c);
        for y in 0..oh {
            let r0 = (oy + 2 * y) * x.width + ox;
            let r1 = r0 + x.width;
            let dst = &mut out.data[(c * oh + y) * ow..(c * oh + y + 1) * ow];
            for (xo, d) in dst.iter_mut().enumerate() {
                let a = plane[r0 + 2 * xo];
                let b = plane[r0 + 2 * xo + 1];
                let e = plane[r1 + 2 * xo];
                let f = plane[r1 + 2 * xo + 1];
                let mut m = a;
                for v in [b, e, f] {
                    if v > m {
                        m = v;
                    }
                }
                *d = m;
            }
        }
    }
    out
}

/// Affine map `W x + b` (linear activation).
pub fn fc_forward<T: Real>(x: &[T], p: &LayerParams<T>) -> Result<Vec<T>> {
    let LayerKind::Dense { inputs, outputs } = p.kind else {
        return Err(Error::invalid("fully-connected layer needs dense parameters"));
    };
    if x.len() != inputs {
        return Err(Error::shape(format!(
            "fully-connected layer expects {inputs} inputs, got {}",
            x.len()
        )));
    }
    Ok((0..outputs)
        .map(|o| {
            let row = &p.weights[o * inputs..(o + 1) * inputs];
            row.iter().zip(x).map(|(&w, &v)| w * v).sum::<T>() + p.bias[o]
        })
        .collect())
}

pub fn fc_backward<T: Real>(
    x: &[T],
    p: &LayerParams<T>,
    grad_out: &[T],
) -> Result<(Vec<T>, LayerGrads<T>)> {
    let LayerKind::Dense { inputs, outputs } = p.kind else {
        return Err(Error::invalid("fully-connected layer needs dense parameters"));
    };
    if x.len() != inputs || grad_out.len() != outputs {
        return Err(Error::shape("fully-connected backward dimensions"));
    }
    let mut grads = LayerGrads::zeros(p.kind);
    let mut gx = vec![T::zero(); inputs];
    for o in 0..outputs {
        let g = grad_out[o];
        grads.bias[o] = g;
        let row = &p.weights[o * inputs..(o + 1) * inputs];
        let grow = &mut grads.weights[o * inputs..(o + 1) * inputs];
        for i in 0..inputs {
            grow[i] = g * x[i];
            gx[i] += g * row[i];
        }
    }
    Ok((gx, grads))
}

/// Mean over samples of the squared Euclidean error, and its gradient with
/// respect to `pred`. `pred` and `target` hold `len / dim` samples of `dim`
/// values each.
pub fn mse_loss<T: Real>(pred: &[T], target: &[T], dim: usize) -> Result<(T, Vec<T>)> {
    if pred.len() != target.len() || dim == 0 || !pred.len().is_multiple_of(dim) || pred.is_empty() {
        return Err(Error::shape(format!(
            "mse over {} predictions and {} targets of dimension {dim}",
            pred.len(),
            target.len()
        )));
    }
    let samples = T::lit((pred.len() / dim) as f64);
    let mut loss = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d * d;
            T::lit(2.0) * d / samples
        })
        .collect();
    Ok((loss / samples, grad))
}

/// Momentum SGD: `v <- momentum * v - lr * g`, `theta <- theta + v`.
pub fn sgd_step<T: Real>(params: &mut [&mut LayerParams<T>], grads: &[LayerGrads<T>], lr: T, momentum: T) {
    assert_eq!(params.len(), grads.len(), "one gradient per layer");
    for (p, g) in params.iter_mut().zip(grads) {
        assert_eq!(p.weights.len(), g.weights.len(), "weight gradient shape");
        assert_eq!(p.bias.len(), g.bias.len(), "bias gradient shape");
        let LayerParams {
            weights,
            bias,
            weight_velocity,
            bias_velocity,
            ..
        } = &mut **p;
        for ((w, v), &gw) in weights.iter_mut().zip(weight_velocity.iter_mut()).zip(&g.weights) {
            *v = momentum * *v - lr * gw;
            *w += *v;
        }
        for ((b, v), &gb) in bias.iter_mut().zip(bias_velocity.iter_mut()).zip(&g.bias) {
            *v = momentum * *v - lr * gb;
            *b += *v;
        }
    }
}

/// Weight initialization scheme. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    /// `N(0, 2 / fan_in)`.
    He,
    /// `N(0, std^2)` with a fixed standard deviation.
    Fixed(f64),
}

impl InitScheme {
    pub fn std_for(&self, kind: LayerKind) -> f64 {
        match *self {
            InitScheme::He => (2.0 / kind.fan_in().max(1) as f64).sqrt(),
            InitScheme::Fixed(s) => s,
        }
    }
}

pub fn gaussian_init_with<T: Real, R: Rng>(kind: LayerKind, scheme: InitScheme, rng: &mut R) -> LayerParams<T> {
    let dist = Normal::new(0.0, scheme.std_for(kind)).expect("finite std");
    let weights = (0..kind.weight_len()).map(|_| T::lit(dist.sample(rng))).collect();
    LayerParams::from_parts(kind, weights, vec![T::zero(); kind.bias_len()]).expect("lengths derived from kind")
}

/// Deterministic Gaussian initialization from a seed.
pub fn gaussian_init<T: Real>(kind: LayerKind, scheme: InitScheme, seed: u64) -> LayerParams<T> {
    gaussian_init_with(kind, scheme, &mut ChaCha8Rng::seed_from_u64(seed))
}
