//! Strided convolution and transposed convolution via im2col + GEMM.
//!
//! Activations are `(channels, rows, cols)` tensors for a single sample;
//! batching happens one level up by running samples in parallel and summing
//! gradients in index order.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3};
use rand::Rng;

use super::init::{he_std, normal};
use super::Params;
use crate::scalar::Real;

/// Lower a padded, strided window view into a `(cin*k*k, hout*wout)` matrix.
pub(crate) fn im2col<T: Real>(
    x: &Array3<T>,
    k: usize,
    stride: usize,
    pad: usize,
    hout: usize,
    wout: usize,
) -> Array2<T> {
    let (cin, h, w) = x.dim();
    let mut cols = Array2::zeros((cin * k * k, hout * wout));
    for ci in 0..cin {
        for kr in 0..k {
            for kc in 0..k {
                let row = (ci * k + kr) * k + kc;
                let mut out_row = cols.row_mut(row);
                let out = out_row.as_slice_mut().expect("row-major");
                for ho in 0..hout {
                    let sr = (ho * stride + kr) as i64 - pad as i64;
                    if sr < 0 || sr >= h as i64 {
                        continue;
                    }
                    let base = ho * wout;
                    for wo in 0..wout {
                        let sc = (wo * stride + kc) as i64 - pad as i64;
                        if sc < 0 || sc >= w as i64 {
                            continue;
                        }
                        out[base + wo] = x[(ci, sr as usize, sc as usize)];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the image grid.
pub(crate) fn col2im<T: Real>(
    cols: &Array2<T>,
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    hout: usize,
    wout: usize,
) -> Array3<T> {
    let mut x = Array3::zeros((cin, h, w));
    for ci in 0..cin {
        for kr in 0..k {
            for kc in 0..k {
                let row = (ci * k + kr) * k + kc;
                let src_row = cols.row(row);
                let src = src_row.as_slice().expect("row-major");
                for ho in 0..hout {
                    let sr = (ho * stride + kr) as i64 - pad as i64;
                    if sr < 0 || sr >= h as i64 {
                        continue;
                    }
                    let base = ho * wout;
                    for wo in 0..wout {
                        let sc = (wo * stride + kc) as i64 - pad as i64;
                        if sc < 0 || sc >= w as i64 {
                            continue;
                        }
                        x[(ci, sr as usize, sc as usize)] =
                            x[(ci, sr as usize, sc as usize)] + src[base + wo];
                    }
                }
            }
        }
    }
    x
}

/// 2D convolution; weights `(cout, cin*k*k)`, bias `(cout)`.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Real> {
    pub w: Array2<T>,
    pub b: Array1<T>,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Forward cache: the lowered input patch matrix plus the input geometry.
pub struct ConvCache<T: Real> {
    cols: Array2<T>,
    in_dim: (usize, usize, usize),
    out_hw: (usize, usize),
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng>(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let std = he_std(cin * k * k);
        let w = Array2::from_shape_fn((cout, cin * k * k), |_| normal(rng, std));
        Self {
            w,
            b: Array1::zeros(cout),
            cin,
            cout,
            k,
            stride,
            pad,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.dim()),
            b: Array1::zeros(self.b.dim()),
            ..*self
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Array3<T>) -> (Array3<T>, ConvCache<T>) {
        let (cin, h, w) = x.dim();
        debug_assert_eq!(cin, self.cin);
        let (ho, wo) = self.out_hw(h, w);
        let cols = im2col(x, self.k, self.stride, self.pad, ho, wo);
        let mut y2 = Array2::zeros((self.cout, ho * wo));
        general_mat_mul(T::one(), &self.w, &cols, T::zero(), &mut y2);
        for (mut row, &bias) in y2.rows_mut().into_iter().zip(self.b.iter()) {
            row.mapv_inplace(|v| v + bias);
        }
        let y = y2
            .into_shape_with_order((self.cout, ho, wo))
            .expect("conv output reshape");
        (
            y,
            ConvCache {
                cols,
                in_dim: (cin, h, w),
                out_hw: (ho, wo),
            },
        )
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient.
    pub fn backward(&self, cache: &ConvCache<T>, dy: &Array3<T>, grad: &mut Self) -> Array3<T> {
        let (ho, wo) = cache.out_hw;
        let dy2 = dy
            .to_shape((self.cout, ho * wo))
            .expect("conv grad reshape");
        general_mat_mul(T::one(), &dy2, &cache.cols.t(), T::one(), &mut grad.w);
        for (g, row) in grad.b.iter_mut().zip(dy2.rows()) {
            *g = *g + row.sum();
        }
        let mut dcols = Array2::zeros(cache.cols.dim());
        general_mat_mul(T::one(), &self.w.t(), &dy2, T::zero(), &mut dcols);
        let (cin, h, w) = cache.in_dim;
        col2im(&dcols, cin, h, w, self.k, self.stride, self.pad, ho, wo)
    }
}

impl<T: Real> Params<T> for Conv2d<T> {
    fn visit<'a>(&'a self, out: &mut Vec<&'a [T]>) {
        out.push(self.w.as_slice().unwrap());
        out.push(self.b.as_slice().unwrap());
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        out.push(self.w.as_slice_mut().unwrap());
        out.push(self.b.as_slice_mut().unwrap());
    }
}

/// Transposed (fractionally strided) convolution, the exact adjoint of a
/// [`Conv2d`] data path; weights `(cin, cout*k*k)`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T: Real> {
    pub w: Array2<T>,
    pub b: Array1<T>,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

pub struct ConvTransposeCache<T: Real> {
    x2: Array2<T>,
    in_hw: (usize, usize),
    out_hw: (usize, usize),
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new<R: Rng>(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        // Each output pixel receives k*k/stride^2 taps per input channel.
        let std = he_std(cin * k * k / (stride * stride));
        let w = Array2::from_shape_fn((cin, cout * k * k), |_| normal(rng, std));
        Self {
            w,
            b: Array1::zeros(cout),
            cin,
            cout,
            k,
            stride,
            pad,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.dim()),
            b: Array1::zeros(self.b.dim()),
            ..*self
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - 1) * self.stride + self.k - 2 * self.pad,
            (w - 1) * self.stride + self.k - 2 * self.pad,
        )
    }

    pub fn forward(&self, x: &Array3<T>) -> (Array3<T>, ConvTransposeCache<T>) {
        let (cin, h, w) = x.dim();
        debug_assert_eq!(cin, self.cin);
        let (ho, wo) = self.out_hw(h, w);
        let x2 = x.to_shape((cin, h * w)).expect("reshape").to_owned();
        let mut cols = Array2::zeros((self.cout * self.k * self.k, h * w));
        general_mat_mul(T::one(), &self.w.t(), &x2, T::zero(), &mut cols);
        let mut y = col2im(&cols, self.cout, ho, wo, self.k, self.stride, self.pad, h, w);
        for (mut plane, &bias) in y.outer_iter_mut().zip(self.b.iter()) {
            plane.mapv_inplace(|v| v + bias);
        }
        (
            y,
            ConvTransposeCache {
                x2,
                in_hw: (h, w),
                out_hw: (ho, wo),
            },
        )
    }

    pub fn backward(
        &self,
        cache: &ConvTransposeCache<T>,
        dy: &Array3<T>,
        grad: &mut Self,
    ) -> Array3<T> {
        let (h, w) = cache.in_hw;
        let (ho, wo) = cache.out_hw;
        let dcols = im2col(dy, self.k, self.stride, self.pad, h, w);
        debug_assert_eq!(dcols.dim().0, self.cout * self.k * self.k);
        general_mat_mul(T::one(), &cache.x2, &dcols.t(), T::one(), &mut grad.w);
        for (g, plane) in grad.b.iter_mut().zip(dy.outer_iter()) {
            *g = *g + plane.sum();
        }
        let mut dx2 = Array2::zeros((self.cin, h * w));
        general_mat_mul(T::one(), &self.w, &dcols, T::zero(), &mut dx2);
        let _ = (ho, wo);
        dx2.into_shape_with_order((self.cin, h, w))
            .expect("transposed conv grad reshape")
    }
}

impl<T: Real> Params<T> for ConvTranspose2d<T> {
    fn visit<'a>(&'a self, out: &mut Vec<&'a [T]>) {
        out.push(self.w.as_slice().unwrap());
        out.push(self.b.as_slice().unwrap());
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        out.push(self.w.as_slice_mut().unwrap());
        out.push(self.b.as_slice_mut().unwrap());
    }
}
