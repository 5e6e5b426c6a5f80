//! Scalar abstraction: every numeric path in this crate is generic over a
//! floating-point type so the same code runs in `f32` for speed and `f64`
//! for gradient checks.

use ndarray::NdFloat;
use rustfft::FftNum;

/// Floating point scalar usable everywhere in the crate: `f32` or `f64`.
pub trait Real: NdFloat + FftNum {
    /// Lossy conversion from `f64`, used for constants and RNG draws.
    fn cast(v: f64) -> Self;
    /// Widening (or identity) conversion to `f64`.
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn cast(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn cast(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
