//! Weight initialisation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Real;

/// He/Kaiming standard deviation for a layer with the given fan-in.
pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in.max(1) as f64).sqrt()
}

/// One zero-mean normal draw with standard deviation `std`, sampled in `f64`
/// and narrowed, so `f32` and `f64` models see the same stream.
pub fn normal<T: Real, R: Rng>(rng: &mut R, std: f64) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::cast(z * std)
}
