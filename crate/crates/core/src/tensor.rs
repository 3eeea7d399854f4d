//! Dense rank-4 tensors in row-major `(n, c, h, w)` order and the handful of
//! neural primitives the toy networks and loss kernels are built from.
//!
//! All functions are pure. Convolutions are lowered to im2col + GEMM; the
//! GEMM kernel is single-threaded with a fixed blocking, so results are
//! bit-reproducible for a given shape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Number of spatial positions per plane.
    pub const fn hw(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub const fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    /// Flat offset to coordinates.
    pub const fn unravel(&self, mut i: usize) -> [usize; 4] {
        let x = i % self.w;
        i /= self.w;
        let y = i % self.h;
        i /= self.h;
        let c = i % self.c;
        [i / self.c, c, y, x]
    }

    pub fn with_c(&self, c: usize) -> Self {
        Self { c, ..*self }
    }
}

impl std::fmt::Display for Shape4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    shape: Shape4,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(shape: Shape4) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: Shape4) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: Shape4, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: Shape4, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(format!(
                "buffer of length {} does not fit shape {shape}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: Shape4, mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let data = (0..shape.numel()).map(|i| f(shape.unravel(i))).collect();
        Self { shape, data }
    }

    pub fn uniform(shape: Shape4, rng: &mut Rng, lo: f64, hi: f64) -> Self {
        let data = (0..shape.numel()).map(|_| rng.uniform_range(lo, hi)).collect();
        Self { shape, data }
    }

    pub fn normal(shape: Shape4, rng: &mut Rng, std: f64) -> Self {
        let data = (0..shape.numel()).map(|_| std * rng.normal()).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.shape.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let o = self.shape.offset(n, c, y, x);
        self.data[o] = v;
    }

    /// The `h·w` plane of channel `c` in sample `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let hw = self.shape.hw();
        let start = (n * self.shape.c + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let hw = self.shape.hw();
        let start = (n * self.shape.c + c) * hw;
        &mut self.data[start..start + hw]
    }

    /// All channels of sample `n` as a `(c, h·w)` row-major block.
    pub fn sample(&self, n: usize) -> &[f64] {
        let len = self.shape.c * self.shape.hw();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.shape.c * self.shape.hw();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Gather samples by index into a new batch.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let s = self.shape;
        let mut data = Vec::with_capacity(indices.len() * s.c * s.hw());
        for &i in indices {
            if i >= s.n {
                return Err(Error::shape(format!("sample {i} out of range for batch {}", s.n)));
            }
            data.extend_from_slice(self.sample(i));
        }
        Ok(Self {
            shape: Shape4::new(indices.len(), s.c, s.h, s.w),
            data,
        })
    }

    /// Stack samples of equally-shaped tensors along the batch axis.
    pub fn concat(parts: &[Tensor4]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?
            .shape;
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            if (p.shape.c, p.shape.h, p.shape.w) != (first.c, first.h, first.w) {
                return Err(Error::shape(format!(
                    "cannot concat {} with {}",
                    p.shape, first
                )));
            }
            n += p.shape.n;
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: Shape4 { n, ..first },
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    /// `self += k · other`
    pub fn add_scaled(&mut self, k: f64, other: &Tensor4) -> Result<()> {
        self.check_same(other, "add_scaled")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Tensor4) -> Result<Self> {
        self.check_same(other, "sub")?;
        Ok(Self {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Permute channels: output channel `i` is input channel `perm[i]`.
    pub fn permute_channels(&self, perm: &[usize]) -> Result<Self> {
        let s = self.shape;
        if perm.len() != s.c {
            return Err(Error::shape("permutation length differs from channel count"));
        }
        let mut out = Tensor4::zeros(s);
        for n in 0..s.n {
            for (dst, &src) in perm.iter().enumerate() {
                out.plane_mut(n, dst).copy_from_slice(self.plane(n, src));
            }
        }
        Ok(out)
    }

    pub(crate) fn check_same(&self, other: &Tensor4, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{what}: shape {} does not match {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

/// Per-pixel class indices with an ignore sentinel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    n: usize,
    h: usize,
    w: usize,
    data: Vec<u32>,
}

impl LabelMap {
    /// Excluded from every loss and metric.
    pub const IGNORE: u32 = u32::MAX;

    pub fn new(n: usize, h: usize, w: usize, data: Vec<u32>) -> Result<Self> {
        if data.len() != n * h * w {
            return Err(Error::shape(format!(
                "label buffer of length {} does not fit ({n}, {h}, {w})",
                data.len()
            )));
        }
        Ok(Self { n, h, w, data })
    }

    pub fn filled(n: usize, h: usize, w: usize, value: u32) -> Self {
        Self {
            n,
            h,
            w,
            data: vec![value; n * h * w],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.h, self.w)
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u32] {
        &mut self.data
    }

    pub fn sample(&self, n: usize) -> &[u32] {
        let hw = self.h * self.w;
        &self.data[n * hw..(n + 1) * hw]
    }

    pub fn get(&self, n: usize, y: usize, x: usize) -> u32 {
        self.data[(n * self.h + y) * self.w + x]
    }

    /// Every non-sentinel label must be below `classes`.
    pub fn validate(&self, classes: usize) -> Result<()> {
        match self
            .data
            .iter()
            .find(|&&v| v != Self::IGNORE && v as usize >= classes)
        {
            Some(v) => Err(Error::param(format!("label {v} not below class count {classes}"))),
            None => Ok(()),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.h * self.w);
        for &i in indices {
            if i >= self.n {
                return Err(Error::shape(format!("sample {i} out of range for batch {}", self.n)));
            }
            data.extend_from_slice(self.sample(i));
        }
        Self::new(indices.len(), self.h, self.w, data)
    }

    /// Nearest-neighbour resize: output pixel `(y, x)` takes source pixel
    /// `(floor(y·h/out_h), floor(x·w/out_w))`.
    pub fn resize_nearest(&self, out_h: usize, out_w: usize) -> Self {
        let mut data = Vec::with_capacity(self.n * out_h * out_w);
        for n in 0..self.n {
            for y in 0..out_h {
                let sy = y * self.h / out_h;
                for x in 0..out_w {
                    let sx = x * self.w / out_w;
                    data.push(self.get(n, sy, sx));
                }
            }
        }
        Self {
            n: self.n,
            h: out_h,
            w: out_w,
            data,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftmaxAxis {
    /// Across channels at each pixel.
    Channel,
    /// Across the `h·w` positions of each channel plane.
    Spatial,
}

pub(crate) fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::param(format!("temperature must be positive, got {t}")));
    }
    Ok(())
}

/// Log-softmax of `x / t` along `axis`, computed with max subtraction.
pub fn log_softmax_over_axis(x: &Tensor4, axis: SoftmaxAxis, t: f64) -> Result<Tensor4> {
    check_temperature(t)?;
    let s = x.shape();
    let mut out = x.clone();
    match axis {
        SoftmaxAxis::Spatial => {
            for n in 0..s.n {
                for c in 0..s.c {
                    log_softmax_slice(out.plane_mut(n, c), t);
                }
            }
        }
        SoftmaxAxis::Channel => {
            let hw = s.hw();
            let mut buf = vec![0.0; s.c];
            for n in 0..s.n {
                let block = out.sample_mut(n);
                for i in 0..hw {
                    for c in 0..s.c {
                        buf[c] = block[c * hw + i];
                    }
                    log_softmax_slice(&mut buf, t);
                    for c in 0..s.c {
                        block[c * hw + i] = buf[c];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Softmax of `x / t` along `axis`. Each slice sums to one.
pub fn softmax_over_axis(x: &Tensor4, axis: SoftmaxAxis, t: f64) -> Result<Tensor4> {
    let mut out = log_softmax_over_axis(x, axis, t)?;
    for v in out.data_mut() {
        *v = v.exp();
    }
    // Renormalise so the rounding in exp does not leave sums off by more
    // than an ulp or two.
    normalise(&mut out, axis);
    Ok(out)
}

fn normalise(p: &mut Tensor4, axis: SoftmaxAxis) {
    let s = p.shape();
    match axis {
        SoftmaxAxis::Spatial => {
            for n in 0..s.n {
                for c in 0..s.c {
                    let plane = p.plane_mut(n, c);
                    let z: f64 = plane.iter().sum();
                    plane.iter_mut().for_each(|v| *v /= z);
                }
            }
        }
        SoftmaxAxis::Channel => {
            let hw = s.hw();
            for n in 0..s.n {
                let block = p.sample_mut(n);
                for i in 0..hw {
                    let z: f64 = (0..s.c).map(|c| block[c * hw + i]).sum();
                    (0..s.c).for_each(|c| block[c * hw + i] /= z);
                }
            }
        }
    }
}

pub(crate) fn log_softmax_slice(v: &mut [f64], t: f64) {
    let max = v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut z = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max) / t;
        z += x.exp();
    }
    let lz = z.ln();
    v.iter_mut().for_each(|x| *x -= lz);
}

/// `c = a·b + beta·c` for row-major `a: m×k`, `b: k×n`, `c: m×n`; either
/// input may be supplied transposed.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted lengths cover every index the strides reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(x: Shape4, weights: Shape4, stride: usize, pad: usize) -> Result<Self> {
        if weights.h != weights.w {
            return Err(Error::shape(format!("kernel must be square, got {weights}")));
        }
        if x.c != weights.c {
            return Err(Error::shape(format!(
                "input has {} channels, kernel expects {}",
                x.c, weights.c
            )));
        }
        if stride == 0 {
            return Err(Error::param("stride must be positive"));
        }
        let k = weights.h;
        if x.h + 2 * pad < k || x.w + 2 * pad < k {
            return Err(Error::shape(format!("kernel {k} larger than padded input {x}")));
        }
        Ok(Self {
            c_in: x.c,
            h: x.h,
            w: x.w,
            k,
            stride,
            pad,
            oh: (x.h + 2 * pad - k) / stride + 1,
            ow: (x.w + 2 * pad - k) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfold one sample `(c_in, h, w)` into `(c_in·k·k, oh·ow)`.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let ncol = self.cols();
        for c in 0..self.c_in {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * ncol..(row + 1) * ncol];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &x[(c * self.h + iy as usize) * self.w..][..self.w];
                        for (ox, d) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `im2col`: scatter-add columns back into `(c_in, h, w)`.
    fn col2im(&self, cols: &[f64], x: &mut [f64]) {
        let ncol = self.cols();
        for c in 0..self.c_in {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &cols[row * ncol..(row + 1) * ncol];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut x[(c * self.h + iy as usize) * self.w..][..self.w];
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation with square kernels `(c_out, c_in, k, k)`, zero
/// padding and a per-output-channel bias.
pub fn conv2d(x: &Tensor4, weights: &Tensor4, bias: &[f64], stride: usize, pad: usize) -> Result<Tensor4> {
    let g = ConvGeom::new(x.shape(), weights.shape(), stride, pad)?;
    let c_out = weights.shape().n;
    if bias.len() != c_out {
        return Err(Error::shape(format!(
            "bias has {} entries for {c_out} output channels",
            bias.len()
        )));
    }
    let n = x.shape().n;
    let mut out = Tensor4::zeros(Shape4::new(n, c_out, g.oh, g.ow));
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; g.rows() * g.cols()]
    };
    for s in 0..n {
        let dst = out.sample_mut(s);
        for (o, b) in bias.iter().enumerate() {
            dst[o * g.cols()..(o + 1) * g.cols()].fill(*b);
        }
        let src: &[f64] = if g.is_pointwise() {
            x.sample(s)
        } else {
            g.im2col(x.sample(s), &mut cols);
            &cols
        };
        gemm(c_out, g.rows(), g.cols(), weights.data(), false, src, false, 1.0, dst);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads {
    /// Empty (zero-sized) when the input gradient was not requested.
    pub grad_x: Tensor4,
    pub grad_w: Tensor4,
    pub grad_b: Vec<f64>,
}

/// Gradients of `Σ grad_out ⊙ conv2d(x, w, b)` with respect to `x`, `w`, `b`.
pub fn conv2d_backward(
    x: &Tensor4,
    weights: &Tensor4,
    grad_out: &Tensor4,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads> {
    conv2d_backward_impl(x, weights, grad_out, stride, pad, true)
}

/// As [`conv2d_backward`] but skips the input gradient (first layers).
pub fn conv2d_backward_params(
    x: &Tensor4,
    weights: &Tensor4,
    grad_out: &Tensor4,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads> {
    conv2d_backward_impl(x, weights, grad_out, stride, pad, false)
}

fn conv2d_backward_impl(
    x: &Tensor4,
    weights: &Tensor4,
    grad_out: &Tensor4,
    stride: usize,
    pad: usize,
    want_x: bool,
) -> Result<ConvGrads> {
    let g = ConvGeom::new(x.shape(), weights.shape(), stride, pad)?;
    let ws = weights.shape();
    let c_out = ws.n;
    let expect = Shape4::new(x.shape().n, c_out, g.oh, g.ow);
    if grad_out.shape() != expect {
        return Err(Error::shape(format!(
            "grad_out shape {} but conv output is {expect}",
            grad_out.shape()
        )));
    }
    let n = x.shape().n;
    let mut grad_w = Tensor4::zeros(ws);
    let mut grad_b = vec![0.0; c_out];
    let mut grad_x = if want_x {
        Tensor4::zeros(x.shape())
    } else {
        Tensor4::zeros(Shape4::new(0, 0, 0, 0))
    };
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![0.0; g.rows() * g.cols()]
    };
    let mut dcols = if want_x && !pointwise {
        vec![0.0; g.rows() * g.cols()]
    } else {
        Vec::new()
    };
    for s in 0..n {
        let go = grad_out.sample(s);
        for (o, gb) in grad_b.iter_mut().enumerate() {
            *gb += go[o * g.cols()..(o + 1) * g.cols()].iter().sum::<f64>();
        }
        let src: &[f64] = if pointwise {
            x.sample(s)
        } else {
            g.im2col(x.sample(s), &mut cols);
            &cols
        };
        // dW += dY · colsᵀ
        gemm(c_out, g.cols(), g.rows(), go, false, src, true, 1.0, grad_w.data_mut());
        if want_x {
            if pointwise {
                gemm(g.rows(), c_out, g.cols(), weights.data(), true, go, false, 0.0, grad_x.sample_mut(s));
            } else {
                // dcols = Wᵀ · dY
                gemm(g.rows(), c_out, g.cols(), weights.data(), true, go, false, 0.0, &mut dcols);
                g.col2im(&dcols, grad_x.sample_mut(s));
            }
        }
    }
    Ok(ConvGrads {
        grad_x,
        grad_w,
        grad_b,
    })
}

pub fn relu(x: &Tensor4) -> Tensor4 {
    x.map(|v| v.max(0.0))
}

/// Gradient through ReLU given the pre-activation input. The derivative at
/// exactly zero is taken as zero.
pub fn relu_backward(pre: &Tensor4, grad_out: &Tensor4) -> Result<Tensor4> {
    pre.check_same(grad_out, "relu_backward")?;
    let data = pre
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect();
    Tensor4::from_vec(pre.shape(), data)
}

/// Bilinear upsampling by an integer factor, half-pixel (align-corners =
/// false) convention: output coordinate `d` samples source coordinate
/// `max((d + 0.5) / factor - 0.5, 0)`, interpolating between `floor(src)`
/// and `min(floor(src) + 1, size - 1)`.
pub fn bilinear_upsample(x: &Tensor4, factor: usize) -> Result<Tensor4> {
    if factor == 0 {
        return Err(Error::param("upsample factor must be positive"));
    }
    let s = x.shape();
    if factor == 1 {
        return Ok(x.clone());
    }
    let oh = s.h * factor;
    let ow = s.w * factor;
    let taps = |out: usize, size: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|d| {
                let src = ((d as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(size - 1);
                let i1 = (i0 + 1).min(size - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let ty = taps(oh, s.h);
    let tx = taps(ow, s.w);
    let mut out = Tensor4::zeros(Shape4::new(s.n, s.c, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (y, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (xx, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let top = src[y0 * s.w + x0] * (1.0 - lx) + src[y0 * s.w + x1] * lx;
                    let bot = src[y1 * s.w + x0] * (1.0 - lx) + src[y1 * s.w + x1] * lx;
                    dst[y * ow + xx] = top * (1.0 - ly) + bot * ly;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis4 {
    N,
    C,
    H,
    W,
}

impl Axis4 {
    fn index(self) -> usize {
        match self {
            Axis4::N => 0,
            Axis4::C => 1,
            Axis4::H => 2,
            Axis4::W => 3,
        }
    }
}

/// Reduce over `axes`, keeping reduced dimensions with size 1.
pub fn reduce(x: &Tensor4, op: ReduceOp, axes: &[Axis4]) -> Result<Tensor4> {
    if axes.is_empty() {
        return Err(Error::param("reduction needs at least one axis"));
    }
    let dims = x.shape().dims();
    let mut mask = [false; 4];
    for a in axes {
        mask[a.index()] = true;
    }
    let mut out_dims = dims;
    for i in 0..4 {
        if mask[i] {
            if dims[i] == 0 {
                return Err(Error::param(format!("reduction over empty axis {i}")));
            }
            out_dims[i] = 1;
        }
    }
    let out_shape = Shape4::new(out_dims[0], out_dims[1], out_dims[2], out_dims[3]);
    let init = if op == ReduceOp::Max { f64::NEG_INFINITY } else { 0.0 };
    let mut out = Tensor4::full(out_shape, init);
    let count: usize = (0..4).filter(|&i| mask[i]).map(|i| dims[i]).product();
    for (i, &v) in x.data().iter().enumerate() {
        let mut idx = x.shape().unravel(i);
        for a in 0..4 {
            if mask[a] {
                idx[a] = 0;
            }
        }
        let o = out_shape.offset(idx[0], idx[1], idx[2], idx[3]);
        let slot = &mut out.data_mut()[o];
        match op {
            ReduceOp::Max => *slot = slot.max(v),
            _ => *slot += v,
        }
    }
    if op == ReduceOp::Mean {
        for v in out.data_mut() {
            *v /= count as f64;
        }
    }
    Ok(out)
}
