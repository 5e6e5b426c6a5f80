//! Activations and the residual block.

use ndarray::Array3;
use rand::Rng;

use super::conv::{Conv2d, ConvCache};
use super::Params;
use crate::scalar::Real;

pub fn relu<T: Real>(x: &Array3<T>) -> Array3<T> {
    x.mapv(|v| v.max(T::zero()))
}

/// Backward through ReLU given the forward *output*.
pub fn relu_backward<T: Real>(y: &Array3<T>, dy: &Array3<T>) -> Array3<T> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &yv| {
        if yv <= T::zero() {
            *d = T::zero();
        }
    });
    dx
}

pub fn sigmoid<T: Real>(x: &Array3<T>) -> Array3<T> {
    x.mapv(|v| T::one() / (T::one() + (-v).exp()))
}

/// Backward through sigmoid given the forward *output*.
pub fn sigmoid_backward<T: Real>(y: &Array3<T>, dy: &Array3<T>) -> Array3<T> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &yv| {
        *d = *d * yv * (T::one() - yv);
    });
    dx
}

/// Stack tensors along the channel axis.
pub fn concat_channels<T: Real>(parts: &[ndarray::ArrayView3<'_, T>]) -> Array3<T> {
    assert!(!parts.is_empty());
    let (_, h, w) = parts[0].dim();
    let total: usize = parts.iter().map(|p| p.dim().0).sum();
    let mut out = Array3::zeros((total, h, w));
    let mut at = 0;
    for p in parts {
        let c = p.dim().0;
        out.slice_mut(ndarray::s![at..at + c, .., ..]).assign(p);
        at += c;
    }
    out
}

/// Mean absolute difference over all elements.
pub fn l1_mean<T: Real>(a: &Array3<T>, b: &Array3<T>) -> T {
    debug_assert_eq!(a.dim(), b.dim());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        acc = acc + (*x - *y).abs();
    }
    acc / T::cast(a.len() as f64)
}

/// Subgradient of [`l1_mean`] with respect to `a`, scaled by `upstream`.
pub fn l1_mean_backward<T: Real>(a: &Array3<T>, b: &Array3<T>, upstream: T) -> Array3<T> {
    let scale = upstream / T::cast(a.len() as f64);
    let mut d = Array3::zeros(a.dim());
    for ((g, x), y) in d.iter_mut().zip(a.iter()).zip(b.iter()) {
        *g = if x > y {
            scale
        } else if x < y {
            -scale
        } else {
            T::zero()
        };
    }
    d
}

/// `y = x + conv2(relu(conv1(x)))`, both convolutions 3x3 stride 1.
/// The second convolution starts near zero so the block opens as identity.
#[derive(Debug, Clone)]
pub struct ResBlock<T: Real> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
}

pub struct ResBlockCache<T: Real> {
    c1: ConvCache<T>,
    a: Array3<T>,
    c2: ConvCache<T>,
}

impl<T: Real> ResBlock<T> {
    pub fn new<R: Rng>(channels: usize, rng: &mut R) -> Self {
        let conv1 = Conv2d::new(channels, channels, 3, 1, 1, rng);
        let mut conv2 = Conv2d::new(channels, channels, 3, 1, 1, rng);
        conv2.w.mapv_inplace(|v| v * T::cast(0.1));
        Self { conv1, conv2 }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
        }
    }

    pub fn forward(&self, x: &Array3<T>) -> (Array3<T>, ResBlockCache<T>) {
        let (h1, c1) = self.conv1.forward(x);
        let a = relu(&h1);
        let (h2, c2) = self.conv2.forward(&a);
        let y = x + &h2;
        (y, ResBlockCache { c1, a, c2 })
    }

    pub fn backward(
        &self,
        cache: &ResBlockCache<T>,
        dy: &Array3<T>,
        grad: &mut Self,
    ) -> Array3<T> {
        let da = self.conv2.backward(&cache.c2, dy, &mut grad.conv2);
        let dh1 = relu_backward(&cache.a, &da);
        let dx1 = self.conv1.backward(&cache.c1, &dh1, &mut grad.conv1);
        dy + &dx1
    }
}

impl<T: Real> Params<T> for ResBlock<T> {
    fn visit<'a>(&'a self, out: &mut Vec<&'a [T]>) {
        self.conv1.visit(out);
        self.conv2.visit(out);
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        self.conv1.visit_mut(out);
        self.conv2.visit_mut(out);
    }
}
