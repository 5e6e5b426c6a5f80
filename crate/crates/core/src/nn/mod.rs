//! Minimal convolutional network stack with hand-derived backward passes.
//!
//! There is no tape: each network wires its layers explicitly and returns a
//! forward cache that the matching backward pass consumes. Gradients live in
//! a second instance of the same model type, so accumulation, optimizer
//! steps, and serialization all reduce to walking parameter slices in a
//! fixed order.

pub mod adam;
pub mod conv;
pub mod init;
pub mod layers;

use crate::scalar::Real;

/// Uniform access to a model's parameter slices, in a stable order.
pub trait Params<T: Real> {
    fn visit<'a>(&'a self, out: &mut Vec<&'a [T]>);
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>);
}

/// Total number of scalar parameters.
pub fn param_count<T: Real, P: Params<T>>(p: &P) -> usize {
    let mut slices = Vec::new();
    p.visit(&mut slices);
    slices.iter().map(|s| s.len()).sum()
}

/// Flatten all parameters into one vector (visit order).
pub fn to_flat<T: Real, P: Params<T>>(p: &P) -> Vec<T> {
    let mut slices = Vec::new();
    p.visit(&mut slices);
    let mut out = Vec::with_capacity(slices.iter().map(|s| s.len()).sum());
    for s in slices {
        out.extend_from_slice(s);
    }
    out
}

/// Load parameters from a flat vector produced by [`to_flat`].
pub fn load_flat<T: Real, P: Params<T>>(p: &mut P, flat: &[T]) -> crate::Result<()> {
    let mut slices = Vec::new();
    p.visit_mut(&mut slices);
    let want: usize = slices.iter().map(|s| s.len()).sum();
    if want != flat.len() {
        return Err(crate::Error::shape(format!(
            "parameter vector has {} entries, model wants {want}",
            flat.len()
        )));
    }
    let mut at = 0;
    for s in slices {
        s.copy_from_slice(&flat[at..at + s.len()]);
        at += s.len();
    }
    Ok(())
}

/// `acc += other`, slice by slice. Panics on structural mismatch.
pub fn add_assign<T: Real, P: Params<T>>(acc: &mut P, other: &P) {
    let mut a = Vec::new();
    acc.visit_mut(&mut a);
    let mut b = Vec::new();
    other.visit(&mut b);
    assert_eq!(a.len(), b.len(), "parameter structure mismatch");
    for (dst, src) in a.into_iter().zip(b) {
        assert_eq!(dst.len(), src.len(), "parameter slice mismatch");
        for (d, s) in dst.iter_mut().zip(src) {
            *d = *d + *s;
        }
    }
}

/// Multiply every parameter by `s`.
pub fn scale<T: Real, P: Params<T>>(p: &mut P, s: T) {
    let mut slices = Vec::new();
    p.visit_mut(&mut slices);
    for sl in slices {
        for v in sl.iter_mut() {
            *v = *v * s;
        }
    }
}

/// Set every parameter to zero.
pub fn zero<T: Real, P: Params<T>>(p: &mut P) {
    scale(p, T::zero());
}

/// L2 norm over all parameters; the per-subnetwork gradient diagnostic.
pub fn l2_norm<T: Real, P: Params<T>>(p: &P) -> T {
    let mut slices = Vec::new();
    p.visit(&mut slices);
    let mut acc = T::zero();
    for s in slices {
        for &v in s {
            acc = acc + v * v;
        }
    }
    acc.sqrt()
}
