//! Translation search over a correlation surface.
//!
//! `score(dx, dy) = sum_p a(p) * b(p + (dx, dy))` with zero padding outside
//! `b`. The FFT route pads both inputs to `(2H, 2W)` so the circular product
//! equals the linear correlation for every shift with `|dx| <= W`,
//! `|dy| <= H`; the brute-force route is the literal shift-and-sum loop kept
//! as the reference oracle.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::geometry::TranslationSpace;
use crate::image::ImagePlane;
use crate::scalar::Real;

/// Scores over every integer translation hypothesis of a [`TranslationSpace`].
/// Row `iy` holds `dy = y_min + iy`, column `ix` holds `dx = x_min + ix`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSurface<T: Real> {
    scores: Array2<T>,
    space: TranslationSpace,
}

impl<T: Real> CorrelationSurface<T> {
    pub fn new(scores: Array2<T>, space: TranslationSpace) -> Result<Self> {
        let (ny, nx) = scores.dim();
        if ny != space.count_y() || nx != space.count_x() {
            return Err(Error::shape(format!(
                "surface is {ny}x{nx} but space wants {}x{}",
                space.count_y(),
                space.count_x()
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("correlation scores must be finite"));
        }
        Ok(Self { scores, space })
    }

    pub fn scores(&self) -> &Array2<T> {
        &self.scores
    }

    pub fn space(&self) -> &TranslationSpace {
        &self.space
    }

    /// Translation hypothesis at a grid cell.
    pub fn offset_at(&self, iy: usize, ix: usize) -> (i64, i64) {
        (self.space.x_min + ix as i64, self.space.y_min + iy as i64)
    }

    /// Largest relative deviation to another surface, scaled by the peak
    /// magnitude of `self`.
    pub fn max_rel_diff(&self, other: &Self) -> T {
        let scale = self
            .scores
            .iter()
            .fold(T::zero(), |m, &v| m.max(v.abs()))
            .max(T::cast(1e-30));
        let mut worst = T::zero();
        for (a, b) in self.scores.iter().zip(other.scores.iter()) {
            worst = worst.max((*a - *b).abs() / scale);
        }
        worst
    }
}

fn check_pair<T: Real>(a: &ImagePlane<T>, b: &ImagePlane<T>) -> Result<()> {
    if a.channels() != 1 || b.channels() != 1 {
        return Err(Error::invalid("correlation expects single-channel images"));
    }
    if a.grid() != b.grid() {
        return Err(Error::shape("correlation inputs must share one grid"));
    }
    Ok(())
}

fn check_space(h: usize, w: usize, space: &TranslationSpace) -> Result<()> {
    if space.x_max > w as i64 || space.y_max > h as i64 {
        return Err(Error::invalid(format!(
            "search radius ({}, {}) exceeds image size {h}x{w}",
            space.x_max, space.y_max
        )));
    }
    Ok(())
}

/// FFT-backed correlation: forward transforms, conjugate product, inverse
/// transform, crop to the search space.
pub fn correlate_fft<T: Real>(
    a: &ImagePlane<T>,
    b: &ImagePlane<T>,
    space: &TranslationSpace,
) -> Result<CorrelationSurface<T>> {
    check_pair(a, b)?;
    check_space(a.height(), a.width(), space)?;
    let scores = xcorr_fft(&a.channel(0), &b.channel(0), space);
    CorrelationSurface::new(scores, *space)
}

/// Literal shift-and-sum correlation, `O(Nx * Ny * H * W)`. Reference oracle
/// for [`correlate_fft`].
pub fn correlate_bruteforce<T: Real>(
    a: &ImagePlane<T>,
    b: &ImagePlane<T>,
    space: &TranslationSpace,
) -> Result<CorrelationSurface<T>> {
    check_pair(a, b)?;
    check_space(a.height(), a.width(), space)?;
    let scores = xcorr_bruteforce(&a.channel(0), &b.channel(0), space);
    CorrelationSurface::new(scores, *space)
}

pub(crate) fn xcorr_bruteforce<T: Real>(
    a: &ArrayView2<T>,
    b: &ArrayView2<T>,
    space: &TranslationSpace,
) -> Array2<T> {
    let (h, w) = a.dim();
    let mut scores = Array2::zeros((space.count_y(), space.count_x()));
    for iy in 0..space.count_y() {
        let dy = space.y_min + iy as i64;
        for ix in 0..space.count_x() {
            let dx = space.x_min + ix as i64;
            let mut acc = T::zero();
            for r in 0..h as i64 {
                let br = r + dy;
                if br < 0 || br >= h as i64 {
                    continue;
                }
                for c in 0..w as i64 {
                    let bc = c + dx;
                    if bc < 0 || bc >= w as i64 {
                        continue;
                    }
                    acc = acc + a[(r as usize, c as usize)] * b[(br as usize, bc as usize)];
                }
            }
            scores[(iy, ix)] = acc;
        }
    }
    scores
}

/// 2D FFT over a row-major complex buffer, in place. `forward == false`
/// applies the inverse transform without the `1/N` normalisation.
fn fft2_in_place<T: Real>(buf: &mut Array2<Complex<T>>, forward: bool) {
    let (rows, cols) = buf.dim();
    let mut planner = FftPlanner::<T>::new();
    let dir_row = if forward {
        planner.plan_fft_forward(cols)
    } else {
        planner.plan_fft_inverse(cols)
    };
    for mut row in buf.rows_mut() {
        dir_row.process(row.as_slice_mut().expect("row-major layout"));
    }
    let dir_col = if forward {
        planner.plan_fft_forward(rows)
    } else {
        planner.plan_fft_inverse(rows)
    };
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); rows];
    for c in 0..cols {
        for r in 0..rows {
            scratch[r] = buf[(r, c)];
        }
        dir_col.process(&mut scratch);
        for r in 0..rows {
            buf[(r, c)] = scratch[r];
        }
    }
}

fn pad_to_complex<T: Real>(x: &ArrayView2<T>, ph: usize, pw: usize) -> Array2<Complex<T>> {
    let mut out = Array2::from_elem((ph, pw), Complex::new(T::zero(), T::zero()));
    for ((r, c), &v) in x.indexed_iter() {
        out[(r, c)] = Complex::new(v, T::zero());
    }
    out
}

pub(crate) fn xcorr_fft<T: Real>(
    a: &ArrayView2<T>,
    b: &ArrayView2<T>,
    space: &TranslationSpace,
) -> Array2<T> {
    let (h, w) = a.dim();
    let (ph, pw) = (2 * h, 2 * w);
    let mut fa = pad_to_complex(a, ph, pw);
    let mut fb = pad_to_complex(b, ph, pw);
    fft2_in_place(&mut fa, true);
    fft2_in_place(&mut fb, true);
    // conj(F(a)) ⊙ F(b), inverse, un-normalised
    let mut prod = Array2::from_shape_fn((ph, pw), |(r, c)| fa[(r, c)].conj() * fb[(r, c)]);
    fft2_in_place(&mut prod, false);
    let norm = T::cast((ph * pw) as f64);
    let mut scores = Array2::zeros((space.count_y(), space.count_x()));
    for iy in 0..space.count_y() {
        let dy = space.y_min + iy as i64;
        let rr = dy.rem_euclid(ph as i64) as usize;
        for ix in 0..space.count_x() {
            let dx = space.x_min + ix as i64;
            let cc = dx.rem_euclid(pw as i64) as usize;
            scores[(iy, ix)] = prod[(rr, cc)].re / norm;
        }
    }
    scores
}

/// Gradients of the correlation scores with respect to both inputs, computed
/// in the Fourier domain. Adjoint of [`xcorr_fft`] restricted to the cropped
/// search space.
pub(crate) fn xcorr_backward_fft<T: Real>(
    a: &ArrayView2<T>,
    b: &ArrayView2<T>,
    space: &TranslationSpace,
    d_scores: &ArrayView2<T>,
) -> (Array2<T>, Array2<T>) {
    let (h, w) = a.dim();
    let (ph, pw) = (2 * h, 2 * w);
    // Scatter the upstream gradient onto the padded torus.
    let mut dgrid = Array2::from_elem((ph, pw), Complex::new(T::zero(), T::zero()));
    for iy in 0..space.count_y() {
        let dy = space.y_min + iy as i64;
        let rr = dy.rem_euclid(ph as i64) as usize;
        for ix in 0..space.count_x() {
            let dx = space.x_min + ix as i64;
            let cc = dx.rem_euclid(pw as i64) as usize;
            dgrid[(rr, cc)] = dgrid[(rr, cc)] + Complex::new(d_scores[(iy, ix)], T::zero());
        }
    }
    fft2_in_place(&mut dgrid, true);
    let norm = T::cast((ph * pw) as f64);

    // da(p) = sum_s dS(s) b(p + s): correlation of the gradient grid with b.
    let mut fb = pad_to_complex(b, ph, pw);
    fft2_in_place(&mut fb, true);
    let mut da_full = Array2::from_shape_fn((ph, pw), |(r, c)| dgrid[(r, c)].conj() * fb[(r, c)]);
    fft2_in_place(&mut da_full, false);

    // db(q) = sum_s dS(s) a(q - s): convolution of the gradient grid with a.
    let mut fa = pad_to_complex(a, ph, pw);
    fft2_in_place(&mut fa, true);
    let mut db_full = Array2::from_shape_fn((ph, pw), |(r, c)| dgrid[(r, c)] * fa[(r, c)]);
    fft2_in_place(&mut db_full, false);

    let da = Array2::from_shape_fn((h, w), |(r, c)| da_full[(r, c)].re / norm);
    let db = Array2::from_shape_fn((h, w), |(r, c)| db_full[(r, c)].re / norm);
    (da, db)
}

/// Sub-pixel translation estimate: softmax the scores at `temperature`, then
/// take the probability-weighted mean of the hypothesis coordinates.
pub fn soft_argmax<T: Real>(surface: &CorrelationSurface<T>, temperature: T) -> Result<(T, T)> {
    if !(temperature > T::zero()) || !temperature.is_finite() {
        return Err(Error::invalid(format!(
            "soft_argmax temperature must be positive, got {temperature}"
        )));
    }
    let probs = softmax_probs(surface, temperature);
    let mut ex = T::zero();
    let mut ey = T::zero();
    for ((iy, ix), &p) in probs.indexed_iter() {
        let (dx, dy) = surface.offset_at(iy, ix);
        ex = ex + p * T::cast(dx as f64);
        ey = ey + p * T::cast(dy as f64);
    }
    Ok((ex, ey))
}

pub(crate) fn softmax_probs<T: Real>(
    surface: &CorrelationSurface<T>,
    temperature: T,
) -> Array2<T> {
    let scores = surface.scores();
    let max = scores.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut probs = scores.mapv(|v| ((v - max) / temperature).exp());
    let z = probs.sum();
    probs.mapv_inplace(|p| p / z);
    probs
}

/// Gradient of `(x_hat, y_hat) = soft_argmax(scores)` pulled back onto the
/// scores: `d_i = p_i * ((x_i - x_hat) gx + (y_i - y_hat) gy) / temperature`.
pub(crate) fn soft_argmax_backward<T: Real>(
    surface: &CorrelationSurface<T>,
    temperature: T,
    upstream: (T, T),
) -> Array2<T> {
    let probs = softmax_probs(surface, temperature);
    let mut ex = T::zero();
    let mut ey = T::zero();
    for ((iy, ix), &p) in probs.indexed_iter() {
        let (dx, dy) = surface.offset_at(iy, ix);
        ex = ex + p * T::cast(dx as f64);
        ey = ey + p * T::cast(dy as f64);
    }
    let (gx, gy) = upstream;
    let mut grad = Array2::zeros(probs.dim());
    for ((iy, ix), &p) in probs.indexed_iter() {
        let (dx, dy) = surface.offset_at(iy, ix);
        let cx = T::cast(dx as f64) - ex;
        let cy = T::cast(dy as f64) - ey;
        grad[(iy, ix)] = p * (cx * gx + cy * gy) / temperature;
    }
    grad
}

/// Integer coordinates of the surface maximum; ties break toward the
/// smallest `(dy, dx)` in lexicographic order.
pub fn hard_argmax<T: Real>(surface: &CorrelationSurface<T>) -> (i64, i64) {
    let scores = surface.scores();
    let mut best = (0usize, 0usize);
    let mut best_v = T::neg_infinity();
    for ((iy, ix), &v) in scores.indexed_iter() {
        if v > best_v {
            best_v = v;
            best = (iy, ix);
        }
    }
    surface.offset_at(best.0, best.1)
}

/// Peak-to-second-peak ratio on min-shifted scores, with a Chebyshev
/// exclusion window of `exclusion` cells around the primary peak. A ratio
/// near 1 means the surface is ambiguous; absent a runner-up the ratio is
/// infinite.
pub fn peak_ratio<T: Real>(surface: &CorrelationSurface<T>, exclusion: usize) -> T {
    let scores = surface.scores();
    let min = scores.iter().fold(T::infinity(), |m, &v| m.min(v));
    let mut peak = (0usize, 0usize);
    let mut peak_v = T::neg_infinity();
    for ((iy, ix), &v) in scores.indexed_iter() {
        if v > peak_v {
            peak_v = v;
            peak = (iy, ix);
        }
    }
    let mut second = T::neg_infinity();
    for ((iy, ix), &v) in scores.indexed_iter() {
        let dr = iy.abs_diff(peak.0);
        let dc = ix.abs_diff(peak.1);
        if dr.max(dc) > exclusion && v > second {
            second = v;
        }
    }
    if !second.is_finite() {
        return T::infinity();
    }
    let eps = T::cast(1e-12);
    (peak_v - min + eps) / (second - min + eps)
}

/// Sub-pixel refinement: soft-argmax restricted to a `(2r+1)^2` window
/// around the integer peak.
pub fn refine_subpixel<T: Real>(
    surface: &CorrelationSurface<T>,
    temperature: T,
    window_radius: usize,
) -> Result<(T, T)> {
    if !(temperature > T::zero()) || !temperature.is_finite() {
        return Err(Error::invalid("refinement temperature must be positive"));
    }
    let scores = surface.scores();
    let (ny, nx) = scores.dim();
    let mut peak = (0usize, 0usize);
    let mut peak_v = T::neg_infinity();
    for ((iy, ix), &v) in scores.indexed_iter() {
        if v > peak_v {
            peak_v = v;
            peak = (iy, ix);
        }
    }
    let r0 = peak.0.saturating_sub(window_radius);
    let r1 = (peak.0 + window_radius + 1).min(ny);
    let c0 = peak.1.saturating_sub(window_radius);
    let c1 = (peak.1 + window_radius + 1).min(nx);
    let mut z = T::zero();
    let mut ex = T::zero();
    let mut ey = T::zero();
    for iy in r0..r1 {
        for ix in c0..c1 {
            let p = ((scores[(iy, ix)] - peak_v) / temperature).exp();
            let (dx, dy) = surface.offset_at(iy, ix);
            z = z + p;
            ex = ex + p * T::cast(dx as f64);
            ey = ey + p * T::cast(dy as f64);
        }
    }
    Ok((ex / z, ey / z))
}

/// Translation loss: `|x - x_gt| + |y - y_gt|`, in pixels.
pub fn loss_pose<T: Real>(pred: (T, T), gt: (T, T)) -> T {
    (pred.0 - gt.0).abs() + (pred.1 - gt.1).abs()
}

/// Subgradient of [`loss_pose`] with respect to the prediction.
pub(crate) fn loss_pose_backward<T: Real>(pred: (T, T), gt: (T, T)) -> (T, T) {
    (sign(pred.0 - gt.0), sign(pred.1 - gt.1))
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Binary surface dump: magic `RSUR`, format version, the four space bounds,
/// then row-major `f64` scores (little endian).
pub fn write_surface<T: Real>(
    surface: &CorrelationSurface<T>,
    path: &std::path::Path,
) -> Result<()> {
    let mut buf = Vec::with_capacity(4 + 4 + 32 + surface.scores().len() * 8);
    buf.extend_from_slice(b"RSUR");
    buf.extend_from_slice(&1u32.to_le_bytes());
    let s = surface.space();
    for v in [s.x_min, s.x_max, s.y_min, s.y_max] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &v in surface.scores().iter() {
        buf.extend_from_slice(&v.to_f64().to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Read back a dump produced by [`write_surface`].
pub fn read_surface(path: &std::path::Path) -> Result<CorrelationSurface<f64>> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let fail = |detail: &str| Error::Parse {
        what: "surface dump",
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 40 || &bytes[..4] != b"RSUR" {
        return Err(fail("missing RSUR header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != 1 {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let mut at = 8;
    let mut next_i64 = || {
        let v = i64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        at += 8;
        v
    };
    let (x_min, x_max, y_min, y_max) = (next_i64(), next_i64(), next_i64(), next_i64());
    let space = TranslationSpace {
        x_min,
        x_max,
        y_min,
        y_max,
    };
    let n = space.count_x() * space.count_y();
    if bytes.len() != 40 + 8 * n {
        return Err(fail("score block has the wrong length"));
    }
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let off = 40 + 8 * i;
        scores.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
    }
    let scores = Array2::from_shape_vec((space.count_y(), space.count_x()), scores)
        .map_err(|e| fail(&e.to_string()))?;
    CorrelationSurface::new(scores, space)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;
    use crate::image::translate;
    use approx::assert_relative_eq;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(side: usize, seed: u64) -> ImagePlane<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = GridSpec::new(side, side, 1.0).unwrap();
        ImagePlane::new(
            Array3::from_shape_fn((1, side, side), |_| rng.gen::<f64>()),
            grid,
        )
        .unwrap()
    }

    fn delta_image(side: usize, row: usize, col: usize) -> ImagePlane<f64> {
        let grid = GridSpec::new(side, side, 1.0).unwrap();
        let mut img = ImagePlane::zeros(1, grid);
        img.data_mut()[(0, row, col)] = 1.0;
        img
    }

    #[test]
    fn identical_deltas_peak_at_origin() {
        let a = delta_image(16, 8, 8);
        let space = TranslationSpace::symmetric(5, 5).unwrap();
        let s = correlate_fft(&a, &a, &space).unwrap();
        assert_eq!(hard_argmax(&s), (0, 0));
        assert_relative_eq!(s.scores()[(5, 5)], 1.0, epsilon = 1e-9);
        assert_relative_eq!(s.scores().sum(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn shifted_delta_peaks_at_shift() {
        let a = delta_image(16, 8, 8);
        let b = delta_image(16, 6, 11); // centre + (3, -2) in (x, y)
        let space = TranslationSpace::symmetric(5, 5).unwrap();
        let s = correlate_fft(&a, &b, &space).unwrap();
        assert_eq!(hard_argmax(&s), (3, -2));
        let sb = correlate_bruteforce(&a, &b, &space).unwrap();
        assert_eq!(hard_argmax(&sb), (3, -2));
    }

    #[test]
    fn fft_matches_bruteforce_on_random_pairs() {
        for seed in 0..8u64 {
            let side = 8;
            let a = random_image(side, seed * 2 + 1);
            let b = random_image(side, seed * 2 + 2);
            let space = TranslationSpace::symmetric(6, 4).unwrap();
            let f = correlate_fft(&a, &b, &space).unwrap();
            let g = correlate_bruteforce(&a, &b, &space).unwrap();
            assert!(f.max_rel_diff(&g).to_f64() < 1e-10);
        }
    }

    /// Random image whose border strip of width `margin` is zero, so any
    /// translation up to `margin` pixels loses no content.
    fn random_image_with_margin(side: usize, margin: usize, seed: u64) -> ImagePlane<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = GridSpec::new(side, side, 1.0).unwrap();
        let data = Array3::from_shape_fn((1, side, side), |(_, r, c)| {
            if r < margin || c < margin || r >= side - margin || c >= side - margin {
                0.0
            } else {
                rng.gen::<f64>()
            }
        });
        ImagePlane::new(data, grid).unwrap()
    }

    #[test]
    fn shift_theorem_on_valid_region() {
        let a = random_image(24, 77);
        let b = random_image_with_margin(24, 6, 78);
        let (sx, sy) = (3i64, -5i64);
        let bt = translate(&b, sx, sy).unwrap();
        let space = TranslationSpace::symmetric(8, 8).unwrap();
        let base = correlate_bruteforce(&a, &b, &space).unwrap();
        let shifted = correlate_bruteforce(&a, &bt, &space).unwrap();
        // surface(a, translate(b, s))(d) == surface(a, b)(d - s) where both
        // hypotheses stay inside the space.
        for iy in 0..space.count_y() {
            for ix in 0..space.count_x() {
                let (dx, dy) = shifted.offset_at(iy, ix);
                let (ox, oy) = (dx - sx, dy - sy);
                if ox < space.x_min || ox > space.x_max || oy < space.y_min || oy > space.y_max {
                    continue;
                }
                let o_ix = (ox - space.x_min) as usize;
                let o_iy = (oy - space.y_min) as usize;
                assert_relative_eq!(
                    shifted.scores()[(iy, ix)],
                    base.scores()[(o_iy, o_ix)],
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn space_larger_than_image_is_rejected() {
        let a = random_image(8, 5);
        let space = TranslationSpace::symmetric(9, 2).unwrap();
        assert!(correlate_fft(&a, &a, &space).is_err());
    }

    #[test]
    fn soft_argmax_peaked_and_uniform() {
        let space = TranslationSpace::symmetric(8, 8).unwrap();
        let mut scores = Array2::<f64>::zeros((17, 17));
        // huge peak at (dx, dy) = (5, -7)
        scores[((-7 + 8) as usize, (5 + 8) as usize)] = 500.0;
        let s = CorrelationSurface::new(scores, space).unwrap();
        let (x, y) = soft_argmax(&s, 1.0).unwrap();
        assert_relative_eq!(x, 5.0, epsilon = 1e-3);
        assert_relative_eq!(y, -7.0, epsilon = 1e-3);

        let flat = CorrelationSurface::new(Array2::from_elem((17, 17), 0.4), space).unwrap();
        let (x, y) = soft_argmax(&flat, 1.0).unwrap();
        assert_relative_eq!(x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn soft_argmax_symmetric_peaks_cancel_and_flag() {
        let space = TranslationSpace::symmetric(8, 8).unwrap();
        let mut scores = Array2::<f64>::zeros((17, 17));
        scores[(8, 4)] = 9.0; // (-4, 0)
        scores[(8, 12)] = 9.0; // (4, 0)
        let s = CorrelationSurface::new(scores, space).unwrap();
        let (x, y) = soft_argmax(&s, 1.0).unwrap();
        assert_relative_eq!(x, 0.0, epsilon = 1e-9);
        assert_relative_eq!(y, 0.0, epsilon = 1e-9);
        // Equal peaks: ratio 1, squarely ambiguous.
        assert!(peak_ratio(&s, 2) < 1.05);
    }

    #[test]
    fn soft_argmax_rejects_bad_temperature() {
        let space = TranslationSpace::symmetric(2, 2).unwrap();
        let s = CorrelationSurface::new(Array2::zeros((5, 5)), space).unwrap();
        assert!(soft_argmax(&s, 0.0).is_err());
        assert!(soft_argmax(&s, -1.0).is_err());
    }

    #[test]
    fn hard_argmax_tie_rule() {
        let space = TranslationSpace::symmetric(2, 2).unwrap();
        let mut scores = Array2::<f64>::zeros((5, 5));
        scores[(1, 3)] = 2.0;
        scores[(3, 1)] = 2.0;
        let s = CorrelationSurface::new(scores, space).unwrap();
        // Ties break toward smaller (dy, dx): row 1 wins.
        assert_eq!(hard_argmax(&s), (1, -1));
    }

    #[test]
    fn hard_argmax_matches_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let space = TranslationSpace::symmetric(6, 3).unwrap();
        for _ in 0..20 {
            let scores =
                Array2::from_shape_fn((space.count_y(), space.count_x()), |_| rng.gen::<f64>());
            let s = CorrelationSurface::new(scores.clone(), space).unwrap();
            let mut best = (0usize, 0usize);
            let mut best_v = f64::NEG_INFINITY;
            for iy in 0..space.count_y() {
                for ix in 0..space.count_x() {
                    if scores[(iy, ix)] > best_v {
                        best_v = scores[(iy, ix)];
                        best = (iy, ix);
                    }
                }
            }
            assert_eq!(hard_argmax(&s), s.offset_at(best.0, best.1));
        }
    }

    #[test]
    fn soft_converges_to_hard_as_temperature_drops() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let space = TranslationSpace::symmetric(6, 6).unwrap();
        let mut scores =
            Array2::from_shape_fn((space.count_y(), space.count_x()), |_| rng.gen::<f64>());
        scores[(2, 9)] += 2.0; // clear peak
        let s = CorrelationSurface::new(scores, space).unwrap();
        let (hx, hy) = hard_argmax(&s);
        let mut prev = f64::INFINITY;
        for temp in [0.5, 0.1, 0.02] {
            let (sx, sy) = soft_argmax(&s, temp).unwrap();
            let dist = (sx - hx as f64).abs() + (sy - hy as f64).abs();
            assert!(dist <= prev + 1e-12, "not monotone: {dist} after {prev}");
            prev = dist;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn loss_pose_examples() {
        assert_eq!(loss_pose((2.0, -3.0), (2.0, -3.0)), 0.0);
        assert_eq!(loss_pose((1.0, 2.0), (4.0, 6.0)), 7.0);
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let mut batch = 0.0;
        let mut oracle = 0.0;
        let n = 16;
        for _ in 0..n {
            let p = (rng.gen::<f64>(), rng.gen::<f64>());
            let g = (rng.gen::<f64>(), rng.gen::<f64>());
            batch += loss_pose(p, g);
            oracle += (p.0 - g.0).abs() + (p.1 - g.1).abs();
        }
        assert_relative_eq!(batch / n as f64, oracle / n as f64, epsilon = 1e-12);
    }

    #[test]
    fn correlation_backward_matches_finite_differences() {
        let side = 6;
        let a = random_image(side, 41);
        let b = random_image(side, 42);
        let space = TranslationSpace::symmetric(3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let d_scores =
            Array2::from_shape_fn((space.count_y(), space.count_x()), |_| rng.gen::<f64>() - 0.5);

        let (da, db) = xcorr_backward_fft(
            &a.channel(0),
            &b.channel(0),
            &space,
            &d_scores.view(),
        );
        let loss = |av: &ImagePlane<f64>, bv: &ImagePlane<f64>| -> f64 {
            let s = xcorr_fft(&av.channel(0), &bv.channel(0), &space);
            (&s * &d_scores).sum()
        };
        let h = 1e-6;
        for (r, c) in [(0usize, 0usize), (2, 3), (5, 5), (3, 1)] {
            let mut ap = a.clone();
            ap.data_mut()[(0, r, c)] += h;
            let mut am = a.clone();
            am.data_mut()[(0, r, c)] -= h;
            let fd = (loss(&ap, &b) - loss(&am, &b)) / (2.0 * h);
            assert_relative_eq!(da[(r, c)], fd, epsilon = 1e-5);

            let mut bp = b.clone();
            bp.data_mut()[(0, r, c)] += h;
            let mut bm = b.clone();
            bm.data_mut()[(0, r, c)] -= h;
            let fd = (loss(&a, &bp) - loss(&a, &bm)) / (2.0 * h);
            assert_relative_eq!(db[(r, c)], fd, epsilon = 1e-5);
        }
    }

    #[test]
    fn soft_argmax_backward_matches_finite_differences() {
        let space = TranslationSpace::symmetric(4, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let scores =
            Array2::from_shape_fn((space.count_y(), space.count_x()), |_| rng.gen::<f64>());
        let s = CorrelationSurface::new(scores.clone(), space).unwrap();
        let temp = 0.7;
        let up = (0.8, -1.3);
        let grad = soft_argmax_backward(&s, temp, up);
        let h = 1e-6;
        for (r, c) in [(0usize, 0usize), (4, 4), (7, 2)] {
            let mut sp = scores.clone();
            sp[(r, c)] += h;
            let mut sm = scores.clone();
            sm[(r, c)] -= h;
            let f = |m: Array2<f64>| {
                let surf = CorrelationSurface::new(m, space).unwrap();
                let (x, y) = soft_argmax(&surf, temp).unwrap();
                up.0 * x + up.1 * y
            };
            let fd = (f(sp) - f(sm)) / (2.0 * h);
            assert_relative_eq!(grad[(r, c)], fd, epsilon = 1e-5);
        }
    }

    #[test]
    fn surface_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("surface.bin");
        let space = TranslationSpace::symmetric(3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let scores =
            Array2::from_shape_fn((space.count_y(), space.count_x()), |_| rng.gen::<f64>());
        let s = CorrelationSurface::new(scores, space).unwrap();
        write_surface(&s, &path).unwrap();
        let back = read_surface(&path).unwrap();
        assert_eq!(back.space(), s.space());
        assert_eq!(back.scores(), s.scores());
    }
}
