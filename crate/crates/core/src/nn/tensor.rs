use std::fmt::Debug;

use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Floating point element type for tensors and the autodiff graph.
///
/// Training runs in `f32`; gradient checks run in `f64`.
pub trait Real: Float + Debug + Default + Send + Sync + std::iter::Sum + 'static {
    /// `c = alpha * op(a) * op(b) + beta * c` on row-major storage with explicit strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        beta: f32,
        c: &mut [f32],
        rsc: isize,
        csc: isize,
    ) {
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: callers pass slices covering the strided extents.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            )
        }
    }

    fn of(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
        rsc: isize,
        csc: isize,
    ) {
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: callers pass slices covering the strided extents.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            )
        }
    }

    fn of(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Self { shape: shape.to_vec(), data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: vec![], data: vec![v] }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Self {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.data.len(), other.data.len(), "shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::of(v.as_f64())).collect() }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Element at a multi-index.
    pub fn at(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, &d) in idx.iter().zip(&self.shape) {
            debug_assert!(*i < d);
            off = off * d + i;
        }
        off
    }
}

/// Plain matrix product `[m,k] x [k,n]` with optional transposes of either operand.
pub fn matmul<T: Real>(a: &Tensor<T>, ta: bool, b: &Tensor<T>, tb: bool) -> Tensor<T> {
    assert_eq!(a.shape.len(), 2);
    assert_eq!(b.shape.len(), 2);
    let (m, k) = if ta { (a.shape[1], a.shape[0]) } else { (a.shape[0], a.shape[1]) };
    let (k2, n) = if tb { (b.shape[1], b.shape[0]) } else { (b.shape[0], b.shape[1]) };
    assert_eq!(k, k2, "matmul inner dimension mismatch");
    let mut out = Tensor::zeros(&[m, n]);
    let (rsa, csa) = if ta { (1, a.shape[1] as isize) } else { (a.shape[1] as isize, 1) };
    let (rsb, csb) = if tb { (1, b.shape[1] as isize) } else { (b.shape[1] as isize, 1) };
    T::gemm(m, k, n, T::one(), &a.data, rsa, csa, &b.data, rsb, csb, T::zero(), &mut out.data, n as isize, 1);
    out
}

/// Geometry of a 2D convolution window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        let ho = (self.height + 2 * self.pad - self.kernel) / self.stride + 1;
        let wo = (self.width + 2 * self.pad - self.kernel) / self.stride + 1;
        (ho, wo)
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
}

/// Unfolds a batch `[n, c, h, w]` into columns `[c*k*k, n*ho*wo]`.
pub fn im2col<T: Real>(x: &[T], batch: usize, g: ConvGeom) -> Vec<T> {
    let (ho, wo) = g.out_hw();
    let plane = ho * wo;
    let ncols = batch * plane;
    let mut cols = vec![T::zero(); g.col_rows() * ncols];
    for n in 0..batch {
        let xin = &x[n * g.channels * g.height * g.width..];
        for c in 0..g.channels {
            for ki in 0..g.kernel {
                for kj in 0..g.kernel {
                    let row = (c * g.kernel + ki) * g.kernel + kj;
                    let dst = &mut cols[row * ncols + n * plane..row * ncols + (n + 1) * plane];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let src = &xin[(c * g.height + iy as usize) * g.width..];
                        for ox in 0..wo {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.width as isize {
                                dst[oy * wo + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates columns back into `[n, c, h, w]`.
pub fn col2im<T: Real>(cols: &[T], batch: usize, g: ConvGeom) -> Vec<T> {
    let (ho, wo) = g.out_hw();
    let plane = ho * wo;
    let ncols = batch * plane;
    let mut x = vec![T::zero(); batch * g.channels * g.height * g.width];
    for n in 0..batch {
        let xo = n * g.channels * g.height * g.width;
        for c in 0..g.channels {
            for ki in 0..g.kernel {
                for kj in 0..g.kernel {
                    let row = (c * g.kernel + ki) * g.kernel + kj;
                    let src = &cols[row * ncols + n * plane..row * ncols + (n + 1) * plane];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let base = xo + (c * g.height + iy as usize) * g.width;
                        for ox in 0..wo {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.width as isize {
                                x[base + ix as usize] = x[base + ix as usize] + src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[o, n*p]` (channel-major) to `[n, o, p]` (batch-major).
pub fn channel_to_batch_major<T: Real>(y: &[T], o: usize, n: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); o * n * p];
    for oc in 0..o {
        for b in 0..n {
            out[(b * o + oc) * p..(b * o + oc + 1) * p].copy_from_slice(&y[oc * n * p + b * p..oc * n * p + (b + 1) * p]);
        }
    }
    out
}

/// `[n, o, p]` to `[o, n*p]`.
pub fn batch_to_channel_major<T: Real>(y: &[T], o: usize, n: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); o * n * p];
    for oc in 0..o {
        for b in 0..n {
            out[oc * n * p + b * p..oc * n * p + (b + 1) * p].copy_from_slice(&y[(b * o + oc) * p..(b * o + oc + 1) * p]);
        }
    }
    out
}
