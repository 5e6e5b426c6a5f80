//! Adam optimizer over flat parameter slices.

use super::Params;
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct Adam<T: Real> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(param_count: usize, lr: T) -> Self {
        Self {
            lr,
            beta1: T::cast(0.9),
            beta2: T::cast(0.999),
            eps: T::cast(1e-8),
            m: vec![T::zero(); param_count],
            v: vec![T::zero(); param_count],
            t: 0,
        }
    }

    /// One update; `grads` must mirror the structure of `params`.
    pub fn step<P: Params<T>>(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let b1 = self.beta1;
        let b2 = self.beta2;
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);

        let mut p_slices = Vec::new();
        params.visit_mut(&mut p_slices);
        let mut g_slices = Vec::new();
        grads.visit(&mut g_slices);
        assert_eq!(p_slices.len(), g_slices.len(), "parameter structure mismatch");

        let mut at = 0usize;
        for (ps, gs) in p_slices.into_iter().zip(g_slices) {
            assert_eq!(ps.len(), gs.len(), "parameter slice mismatch");
            for (p, &g) in ps.iter_mut().zip(gs.iter()) {
                let m = &mut self.m[at];
                let v = &mut self.v[at];
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p = *p - self.lr * m_hat / (v_hat.sqrt() + self.eps);
                at += 1;
            }
        }
        assert_eq!(at, self.m.len(), "optimizer state length mismatch");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param_count;
    use ndarray::Array1;

    struct Quad {
        x: Array1<f64>,
    }

    impl Params<f64> for Quad {
        fn visit<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
            out.push(self.x.as_slice().unwrap());
        }
        fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
            out.push(self.x.as_slice_mut().unwrap());
        }
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut p = Quad {
            x: Array1::from_vec(vec![3.0, -2.0, 0.7]),
        };
        let mut opt = Adam::new(param_count(&p), 0.05);
        for _ in 0..600 {
            let g = Quad { x: 2.0 * &p.x };
            opt.step(&mut p, &g);
        }
        assert!(p.x.iter().all(|v| v.abs() < 1e-3), "{:?}", p.x);
    }
}
