//! Rotation selector: scores an ensemble of rotated radar images against the
//! overhead view and returns softmax coefficients over the hypotheses.
//!
//! The overhead image and all ensemble members are concatenated along
//! channels, pushed through five stride-2 convolutions and six residual
//! blocks, and the final feature map is summed in per-hypothesis channel
//! groups to one logit each. Inference canonicalizes the ensemble by
//! ascending angle, so member order does not affect the selected rotation.

use ndarray::{Array1, Array3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::ThetaGrid;
use crate::image::{ImagePlane, RotationEnsemble};
use crate::nn::conv::{Conv2d, ConvCache};
use crate::nn::layers::{concat_channels, l1_mean, relu, relu_backward, ResBlock, ResBlockCache};
use crate::nn::Params;
use crate::scalar::Real;

/// Architecture hyperparameters, fixed at build time.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SelectorHyper {
    pub n_theta: usize,
    pub sat_channels: usize,
    pub radar_channels: usize,
    /// Base channel count of the first convolution.
    pub width: usize,
    /// Channels summed per hypothesis logit.
    pub group_channels: usize,
}

impl SelectorHyper {
    fn validate(&self) -> Result<()> {
        if self.n_theta == 0
            || self.sat_channels == 0
            || self.radar_channels == 0
            || self.width == 0
            || self.group_channels == 0
        {
            return Err(Error::invalid("selector hyperparameters must be positive"));
        }
        Ok(())
    }
}

const SELECTOR_DOWNS: usize = 5;
const SELECTOR_BLOCKS: usize = 6;

/// The rotation selector network.
#[derive(Debug, Clone)]
pub struct RotationSelectorModel<T: Real> {
    hyper: SelectorHyper,
    downs: Vec<Conv2d<T>>,
    blocks: Vec<ResBlock<T>>,
}

pub struct SelectorCache<T: Real> {
    conv_caches: Vec<ConvCache<T>>,
    activations: Vec<Array3<T>>,
    block_caches: Vec<ResBlockCache<T>>,
    feature_dim: (usize, usize, usize),
    alpha: Array1<T>,
}

impl<T: Real> RotationSelectorModel<T> {
    pub fn new<R: Rng>(hyper: SelectorHyper, rng: &mut R) -> Result<Self> {
        hyper.validate()?;
        let c_in = hyper.sat_channels + hyper.n_theta * hyper.radar_channels;
        let w = hyper.width;
        let head = hyper.n_theta * hyper.group_channels;
        let plan = [c_in, w, 2 * w, 4 * w, 4 * w, head];
        let mut downs = Vec::with_capacity(SELECTOR_DOWNS);
        for i in 0..SELECTOR_DOWNS {
            downs.push(Conv2d::new(plan[i], plan[i + 1], 4, 2, 1, rng));
        }
        let blocks = (0..SELECTOR_BLOCKS)
            .map(|_| ResBlock::new(head, rng))
            .collect();
        Ok(Self {
            hyper,
            downs,
            blocks,
        })
    }

    pub fn hyper(&self) -> &SelectorHyper {
        &self.hyper
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hyper: self.hyper.clone(),
            downs: self.downs.iter().map(Conv2d::zeros_like).collect(),
            blocks: self.blocks.iter().map(ResBlock::zeros_like).collect(),
        }
    }

    /// Forward pass on an already-assembled input tensor (overhead channels
    /// first, then ensemble members by ascending angle).
    pub fn forward(&self, input: &Array3<T>) -> (Array1<T>, SelectorCache<T>) {
        let mut conv_caches = Vec::with_capacity(SELECTOR_DOWNS);
        let mut activations = Vec::with_capacity(SELECTOR_DOWNS);
        let mut x = input.clone();
        for conv in &self.downs {
            let (y, cache) = conv.forward(&x);
            let a = relu(&y);
            conv_caches.push(cache);
            activations.push(a.clone());
            x = a;
        }
        let mut block_caches = Vec::with_capacity(SELECTOR_BLOCKS);
        for block in &self.blocks {
            let (y, cache) = block.forward(&x);
            block_caches.push(cache);
            x = y;
        }
        let feature_dim = x.dim();
        let g = self.hyper.group_channels;
        let mut logits = Array1::zeros(self.hyper.n_theta);
        for n in 0..self.hyper.n_theta {
            let group = x.slice(ndarray::s![n * g..(n + 1) * g, .., ..]);
            logits[n] = group.sum();
        }
        let alpha = softmax(&logits);
        (
            alpha.clone(),
            SelectorCache {
                conv_caches,
                activations,
                block_caches,
                feature_dim,
                alpha,
            },
        )
    }

    /// Backward from a coefficient gradient; accumulates into `grad` and
    /// returns the input gradient.
    pub fn backward(
        &self,
        cache: &SelectorCache<T>,
        d_alpha: &Array1<T>,
        grad: &mut Self,
    ) -> Array3<T> {
        // softmax backward
        let a = &cache.alpha;
        let dot = d_alpha
            .iter()
            .zip(a.iter())
            .fold(T::zero(), |acc, (&d, &p)| acc + d * p);
        let d_logits = Array1::from_shape_fn(a.len(), |i| a[i] * (d_alpha[i] - dot));

        // broadcast each logit gradient over its channel group
        let g = self.hyper.group_channels;
        let mut dx = Array3::zeros(cache.feature_dim);
        for n in 0..self.hyper.n_theta {
            dx.slice_mut(ndarray::s![n * g..(n + 1) * g, .., ..])
                .fill(d_logits[n]);
        }

        for i in (0..SELECTOR_BLOCKS).rev() {
            dx = self.blocks[i].backward(&cache.block_caches[i], &dx, &mut grad.blocks[i]);
        }
        for i in (0..SELECTOR_DOWNS).rev() {
            let d_pre = relu_backward(&cache.activations[i], &dx);
            dx = self.downs[i].backward(&cache.conv_caches[i], &d_pre, &mut grad.downs[i]);
        }
        dx
    }
}

impl<T: Real> Params<T> for RotationSelectorModel<T> {
    fn visit<'a>(&'a self, out: &mut Vec<&'a [T]>) {
        for c in &self.downs {
            c.visit(out);
        }
        for b in &self.blocks {
            b.visit(out);
        }
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        for c in &mut self.downs {
            c.visit_mut(out);
        }
        for b in &mut self.blocks {
            b.visit_mut(out);
        }
    }
}

fn softmax<T: Real>(logits: &Array1<T>) -> Array1<T> {
    let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut out = logits.mapv(|v| (v - max).exp());
    let z = out.sum();
    out.mapv_inplace(|v| v / z);
    out
}

/// Softmax coefficients over the rotation hypotheses: nonnegative, summing
/// to one, reported in the ensemble's member order.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationCoefficients<T: Real> {
    alpha: Vec<T>,
}

impl<T: Real> RotationCoefficients<T> {
    pub fn new(alpha: Vec<T>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::invalid("coefficient vector must be nonempty"));
        }
        let mut sum = T::zero();
        for &a in &alpha {
            if !a.is_finite() || a < T::zero() || a > T::one() {
                return Err(Error::invalid(format!(
                    "coefficients must lie in [0, 1], got {a}"
                )));
            }
            sum = sum + a;
        }
        if (sum - T::one()).abs().to_f64() > 1e-5 {
            return Err(Error::invalid(format!(
                "coefficients must sum to 1 within 1e-5, got {sum}"
            )));
        }
        Ok(Self { alpha })
    }

    pub fn values(&self) -> &[T] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Index of the largest coefficient; ties break toward the smaller index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        let mut best_v = T::neg_infinity();
        for (i, &a) in self.alpha.iter().enumerate() {
            if a > best_v {
                best_v = a;
                best = i;
            }
        }
        best
    }
}

/// Assemble the network input for an ensemble + overhead pair in canonical
/// (ascending angle) order. Returns the input tensor and the member
/// permutation that was applied.
pub(crate) fn build_selector_input<T: Real>(
    ensemble: &RotationEnsemble<T>,
    sat: &ImagePlane<T>,
) -> (Array3<T>, Vec<usize>) {
    let order = ensemble.sorted_order();
    let mut parts = Vec::with_capacity(1 + order.len());
    parts.push(sat.data().view());
    for &i in &order {
        parts.push(ensemble.members()[i].data().view());
    }
    (concat_channels(&parts), order)
}

/// Run the selector on an ensemble/overhead pair.
pub fn infer_coefficients<T: Real>(
    model: &RotationSelectorModel<T>,
    ensemble: &RotationEnsemble<T>,
    sat: &ImagePlane<T>,
) -> Result<RotationCoefficients<T>> {
    check_selector_inputs(model, ensemble, sat)?;
    let (input, order) = build_selector_input(ensemble, sat);
    let (alpha, _) = model.forward(&input);
    // map back from canonical order to the caller's member order
    let mut out = vec![T::zero(); alpha.len()];
    for (canonical, &member) in order.iter().enumerate() {
        out[member] = alpha[canonical];
    }
    RotationCoefficients::new(out)
}

pub(crate) fn check_selector_inputs<T: Real>(
    model: &RotationSelectorModel<T>,
    ensemble: &RotationEnsemble<T>,
    sat: &ImagePlane<T>,
) -> Result<()> {
    let h = model.hyper();
    if ensemble.len() != h.n_theta {
        return Err(Error::invalid(format!(
            "ensemble has {} members but the model was built for {}",
            ensemble.len(),
            h.n_theta
        )));
    }
    if sat.grid() != ensemble.grid() {
        return Err(Error::shape("ensemble and overhead image grids differ"));
    }
    if sat.channels() != h.sat_channels
        || ensemble.members()[0].channels() != h.radar_channels
    {
        return Err(Error::shape("channel counts do not match the model"));
    }
    Ok(())
}

/// Pixelwise linear combination of the ensemble members. With a one-hot
/// coefficient vector this is bit-equal to the selected member.
pub fn combine<T: Real>(
    ensemble: &RotationEnsemble<T>,
    alpha: &RotationCoefficients<T>,
) -> Result<ImagePlane<T>> {
    if ensemble.len() != alpha.len() {
        return Err(Error::invalid(format!(
            "ensemble has {} members, coefficients have {}",
            ensemble.len(),
            alpha.len()
        )));
    }
    let combined = combine_arrays(ensemble, alpha.values());
    // Convex combination; clamp float dust so the [0, 1] invariant holds.
    let data = combined.mapv(|v| v.max(T::zero()).min(T::one()));
    Ok(ImagePlane::from_raw_unchecked(data, *ensemble.grid()))
}

/// Raw weighted sum used by both [`combine`] and the training graph.
/// Zero-weight members are skipped so one-hot selection is exact.
pub(crate) fn combine_arrays<T: Real>(ensemble: &RotationEnsemble<T>, alpha: &[T]) -> Array3<T> {
    let dim = ensemble.members()[0].data().dim();
    let mut out = Array3::zeros(dim);
    for (member, &a) in ensemble.members().iter().zip(alpha) {
        if a == T::zero() {
            continue;
        }
        out.zip_mut_with(member.data(), |o, &m| *o = *o + a * m);
    }
    out
}

/// Gradient of [`combine_arrays`] with respect to the coefficients.
pub(crate) fn combine_backward<T: Real>(
    ensemble: &RotationEnsemble<T>,
    d_out: &Array3<T>,
) -> Vec<T> {
    ensemble
        .members()
        .iter()
        .map(|m| {
            m.data()
                .iter()
                .zip(d_out.iter())
                .fold(T::zero(), |acc, (&mv, &dv)| acc + mv * dv)
        })
        .collect()
}

/// Rotation estimate: the grid angle of the largest coefficient. Ties break
/// toward the smaller index.
pub fn select_theta<T: Real>(
    alpha: &RotationCoefficients<T>,
    grid: &ThetaGrid<T>,
) -> Result<T> {
    if alpha.len() != grid.len() {
        return Err(Error::invalid(format!(
            "{} coefficients against a {}-value grid",
            alpha.len(),
            grid.len()
        )));
    }
    Ok(grid.values()[alpha.argmax()])
}

/// Mean absolute pixel difference between the selector output and the
/// rotation-aligned target.
pub fn loss_h<T: Real>(output: &ImagePlane<T>, target: &ImagePlane<T>) -> Result<T> {
    if output.data().dim() != target.data().dim() {
        return Err(Error::shape("loss_h inputs must have identical shape"));
    }
    Ok(l1_mean(output.data(), target.data()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;
    use crate::image::make_ensemble;
    use approx::assert_relative_eq;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_hyper(n_theta: usize) -> SelectorHyper {
        SelectorHyper {
            n_theta,
            sat_channels: 1,
            radar_channels: 1,
            width: 2,
            group_channels: 1,
        }
    }

    fn random_image(side: usize, channels: usize, seed: u64) -> ImagePlane<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = GridSpec::new(side, side, 1.0).unwrap();
        ImagePlane::new(
            Array3::from_shape_fn((channels, side, side), |_| rng.gen::<f64>()),
            grid,
        )
        .unwrap()
    }

    #[test]
    fn untrained_coefficients_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = RotationSelectorModel::<f64>::new(toy_hyper(3), &mut rng).unwrap();
        let radar = random_image(32, 1, 2);
        let sat = random_image(32, 1, 3);
        let grid = ThetaGrid::centred(0.0, 3, 0.1).unwrap();
        let ens = make_ensemble(&radar, &grid).unwrap();
        let alpha = infer_coefficients(&model, &ens, &sat).unwrap();
        let sum: f64 = alpha.values().iter().sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-9);
        assert!(alpha.values().iter().all(|&a| (0.0..=1.0).contains(&a)));
    }

    #[test]
    fn n_theta_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = RotationSelectorModel::<f64>::new(toy_hyper(3), &mut rng).unwrap();
        let radar = random_image(32, 1, 5);
        let sat = random_image(32, 1, 6);
        let grid = ThetaGrid::centred(0.0, 5, 0.1).unwrap();
        let ens = make_ensemble(&radar, &grid).unwrap();
        assert!(matches!(
            infer_coefficients(&model, &ens, &sat),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn permuted_ensemble_gives_identical_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = RotationSelectorModel::<f64>::new(toy_hyper(4), &mut rng).unwrap();
        let radar = random_image(32, 1, 8);
        let sat = random_image(32, 1, 9);
        let grid = ThetaGrid::centred(0.0, 4, 0.1).unwrap();
        let ens = make_ensemble(&radar, &grid).unwrap();
        let alpha = infer_coefficients(&model, &ens, &sat).unwrap();
        let theta = ens.thetas()[alpha.argmax()];

        // shuffle members together with their angles
        let perm = [2usize, 0, 3, 1];
        let members = perm.iter().map(|&i| ens.members()[i].clone()).collect();
        let thetas = perm.iter().map(|&i| ens.thetas()[i]).collect();
        let shuffled = RotationEnsemble::from_parts(members, thetas).unwrap();
        let alpha_p = infer_coefficients(&model, &shuffled, &sat).unwrap();
        let theta_p = shuffled.thetas()[alpha_p.argmax()];
        assert_relative_eq!(theta, theta_p);
        // coefficients themselves are the same set, permuted
        for (new_idx, &old_idx) in perm.iter().enumerate() {
            assert_relative_eq!(alpha_p.values()[new_idx], alpha.values()[old_idx]);
        }
    }

    #[test]
    fn combine_one_hot_is_bit_exact() {
        let radar = random_image(16, 1, 10);
        let grid = ThetaGrid::centred(0.0, 3, 0.2).unwrap();
        let ens = make_ensemble(&radar, &grid).unwrap();
        let alpha = RotationCoefficients::new(vec![0.0, 1.0, 0.0]).unwrap();
        let out = combine(&ens, &alpha).unwrap();
        assert_eq!(out, ens.members()[1]);
    }

    #[test]
    fn combine_uniform_over_identical_members() {
        let radar = random_image(16, 1, 11);
        let ens = RotationEnsemble::from_parts(vec![radar.clone(), radar.clone()], vec![0.0, 0.1])
            .unwrap();
        let alpha = RotationCoefficients::new(vec![0.5, 0.5]).unwrap();
        let out = combine(&ens, &alpha).unwrap();
        assert!(out.max_abs_diff(&radar) < 1e-12);
    }

    #[test]
    fn combine_is_linear_in_coefficients() {
        let grid = GridSpec::new(8, 8, 1.0).unwrap();
        let mut d1 = ImagePlane::<f64>::zeros(1, grid);
        d1.data_mut()[(0, 2, 2)] = 1.0;
        let mut d2 = ImagePlane::<f64>::zeros(1, grid);
        d2.data_mut()[(0, 5, 6)] = 1.0;
        let ens = RotationEnsemble::from_parts(vec![d1, d2], vec![0.0, 0.1]).unwrap();
        let alpha = RotationCoefficients::new(vec![0.3, 0.7]).unwrap();
        let out = combine(&ens, &alpha).unwrap();
        assert_relative_eq!(out.data()[(0, 2, 2)], 0.3);
        assert_relative_eq!(out.data()[(0, 5, 6)], 0.7);

        // additivity on raw arrays
        let a = combine_arrays(&ens, &[0.2, 0.4]);
        let b = combine_arrays(&ens, &[0.1, 0.3]);
        let ab = combine_arrays(&ens, &[0.3, 0.7]);
        let sum = &a + &b;
        assert!(ab
            .iter()
            .zip(sum.iter())
            .all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn select_theta_examples() {
        // one-hot at n = 3 on a 1-degree grid starting at -5 degrees
        let deg = std::f64::consts::PI / 180.0;
        let values: Vec<f64> = (0..11).map(|i| (-5.0 + i as f64) * deg).collect();
        let grid = ThetaGrid::new(values).unwrap();
        let mut alpha = vec![0.0; 11];
        alpha[3] = 1.0;
        let alpha = RotationCoefficients::new(alpha).unwrap();
        let theta = select_theta(&alpha, &grid).unwrap();
        assert_relative_eq!(theta, -2.0 * deg, epsilon = 1e-12);

        // uniform coefficients: tie rule picks the first grid value
        let uniform = RotationCoefficients::new(vec![1.0 / 11.0; 11]).unwrap();
        let theta = select_theta(&uniform, &grid).unwrap();
        assert_relative_eq!(theta, -5.0 * deg, epsilon = 1e-12);
    }

    #[test]
    fn select_theta_argmax_scale_invariance() {
        // argmax of softmax(s) equals argmax of softmax(c * s) for c > 0 at
        // the level of the selected hypothesis.
        let logits = [0.3, 1.7, -0.2, 0.9];
        for scale in [0.5, 1.0, 3.0] {
            let scaled: Vec<f64> = logits.iter().map(|&l| l * scale).collect();
            let exp: Vec<f64> = scaled.iter().map(|l| l.exp()).collect();
            let z: f64 = exp.iter().sum();
            let alpha = RotationCoefficients::new(exp.iter().map(|e| e / z).collect()).unwrap();
            assert_eq!(alpha.argmax(), 1);
        }
    }

    #[test]
    fn loss_h_examples_and_oracle() {
        let grid = GridSpec::new(8, 8, 1.0).unwrap();
        let zeros = ImagePlane::<f64>::zeros(1, grid);
        let mut ones = ImagePlane::<f64>::zeros(1, grid);
        ones.data_mut().fill(1.0);
        assert_relative_eq!(loss_h(&zeros, &zeros).unwrap(), 0.0);
        assert_relative_eq!(loss_h(&zeros, &ones).unwrap(), 1.0);

        let a = random_image(8, 1, 20);
        let b = random_image(8, 1, 21);
        let mut oracle = 0.0;
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            oracle += (x - y).abs();
        }
        oracle /= 64.0;
        assert_relative_eq!(loss_h(&a, &b).unwrap(), oracle, epsilon = 1e-12);

        let c = random_image(4, 1, 22);
        assert!(loss_h(&a, &c).is_err());
    }

    #[test]
    fn coefficient_validation() {
        assert!(RotationCoefficients::new(vec![0.5, 0.6]).is_err());
        assert!(RotationCoefficients::new(vec![-0.1, 1.1]).is_err());
        assert!(RotationCoefficients::<f64>::new(vec![]).is_err());
        assert!(RotationCoefficients::new(vec![0.25; 4]).is_ok());
    }

    #[test]
    fn selector_gradient_matches_finite_differences() {
        use crate::nn::{load_flat, to_flat};
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let model = RotationSelectorModel::<f64>::new(toy_hyper(3), &mut rng).unwrap();
        let radar = random_image(32, 1, 32);
        let sat = random_image(32, 1, 33);
        let grid = ThetaGrid::centred(0.05, 3, 0.1).unwrap();
        let ens = make_ensemble(&radar, &grid).unwrap();
        let target = crate::image::rotate_about_center(&radar, 0.05).unwrap();

        let loss_of = |m: &RotationSelectorModel<f64>| -> f64 {
            let (input, _) = build_selector_input(&ens, &sat);
            let (alpha, _) = m.forward(&input);
            let out = combine_arrays(&ens, alpha.as_slice().unwrap());
            l1_mean(&out, target.data())
        };

        // analytic gradient
        let (input, _) = build_selector_input(&ens, &sat);
        let (alpha, cache) = model.forward(&input);
        let out = combine_arrays(&ens, alpha.as_slice().unwrap());
        let d_out = crate::nn::layers::l1_mean_backward(&out, target.data(), 1.0);
        let d_alpha_vec = combine_backward(&ens, &d_out);
        let d_alpha = ndarray::Array1::from_vec(d_alpha_vec);
        let mut grad = model.zeros_like();
        model.backward(&cache, &d_alpha, &mut grad);

        let flat = to_flat(&model);
        let gflat = to_flat(&grad);
        let h = 1e-5;
        let mut checked = 0;
        let mut idx_rng = ChaCha8Rng::seed_from_u64(34);
        while checked < 12 {
            let idx = idx_rng.gen_range(0..flat.len());
            let mut mp = model.clone();
            let mut fp = flat.clone();
            fp[idx] += h;
            load_flat(&mut mp, &fp).unwrap();
            let lp = loss_of(&mp);
            fp[idx] -= 2.0 * h;
            load_flat(&mut mp, &fp).unwrap();
            let lm = loss_of(&mp);
            let fd = (lp - lm) / (2.0 * h);
            let an = gflat[idx];
            if fd.abs() < 1e-10 && an.abs() < 1e-10 {
                continue; // inactive parameter this draw
            }
            let rel = (an - fd).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel < 1e-3, "param {idx}: analytic {an}, fd {fd}");
            checked += 1;
        }
    }
}
