//! End-to-end localisation: ensemble, rotation selection, generation, joint
//! embedding, and FFT translation search, composed over a loaded bundle.

use std::time::Instant;

use crate::config::TrainConfig;
use crate::correlation::{
    correlate_fft, hard_argmax, peak_ratio, refine_subpixel, CorrelationSurface,
};
use crate::embed::{embed, EmbedId, EmbeddingModel};
use crate::error::{Error, Result};
use crate::generator::{generate, GeneratorModel};
use crate::geometry::{pixels_to_metres, GridSpec, SE2Offset, ThetaGrid, TranslationSpace};
use crate::image::{make_ensemble, ImagePlane};
use crate::scalar::Real;
use crate::selector::{combine, infer_coefficients, select_theta, RotationSelectorModel};

/// Discretizations and thresholds an inference bundle was trained with.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InferenceSettings {
    pub grid: GridSpec,
    pub theta_count: usize,
    pub theta_spacing_rad: f64,
    pub space: TranslationSpace,
    pub temperature: f64,
    /// Refine the integer peak with a windowed soft-argmax.
    pub subpixel_refine: bool,
    /// Window radius of the sub-pixel refinement, cells.
    pub refine_window: usize,
    /// Chebyshev exclusion radius when hunting the second peak.
    pub peak_exclusion: usize,
    /// Estimates with a peak ratio below this are flagged ambiguous.
    pub ambiguity_ratio: f64,
    /// Harness ablation: generator conditioned on the overhead image only.
    pub satellite_only: bool,
}

impl InferenceSettings {
    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        Ok(Self {
            grid: cfg.grid()?,
            theta_count: cfg.n_theta,
            theta_spacing_rad: cfg.theta_spacing_rad(),
            space: cfg.space()?,
            temperature: cfg.temperature,
            subpixel_refine: false,
            refine_window: 2,
            peak_exclusion: 2,
            ambiguity_ratio: 1.02,
            satellite_only: cfg.ablation_satellite_only,
        })
    }
}

/// All four subnetworks plus the settings they were trained with.
#[derive(Debug, Clone)]
pub struct ModelBundle<T: Real> {
    pub selector: RotationSelectorModel<T>,
    pub generator: GeneratorModel<T>,
    pub embedding: EmbeddingModel<T>,
    pub settings: InferenceSettings,
}

impl<T: Real> ModelBundle<T> {
    pub fn new(
        selector: RotationSelectorModel<T>,
        generator: GeneratorModel<T>,
        embedding: EmbeddingModel<T>,
        settings: InferenceSettings,
    ) -> Result<Self> {
        if selector.hyper().n_theta != settings.theta_count {
            return Err(Error::invalid(
                "selector hypothesis count disagrees with the bundle settings",
            ));
        }
        if embedding.ea.hyper().input_height != settings.grid.height
            || embedding.ea.hyper().input_width != settings.grid.width
        {
            return Err(Error::invalid(
                "embedding input size disagrees with the bundle grid",
            ));
        }
        Ok(Self {
            selector,
            generator,
            embedding,
            settings,
        })
    }
}

/// One localisation answer with its diagnostics.
#[derive(Debug, Clone)]
pub struct LocalizationResult<T: Real> {
    pub estimate: SE2Offset<T>,
    /// Rotation coefficients in ensemble (grid) order.
    pub alpha: Vec<T>,
    pub peak_score: T,
    pub peak_ratio: T,
    pub ambiguous: bool,
    pub latency_ms: f64,
}

/// Anything that can turn an image pair plus a heading prior into an SE(2)
/// estimate. Implemented by [`ModelBundle`] and by test oracles.
pub trait Localizer<T: Real>: Sync {
    fn localize(
        &self,
        radar: &ImagePlane<T>,
        overhead: &ImagePlane<T>,
        theta0: T,
    ) -> Result<LocalizationResult<T>>;
}

impl<T: Real> ModelBundle<T> {
    /// Full pipeline; also returns the correlation surface for dumping.
    pub fn localize_full(
        &self,
        radar: &ImagePlane<T>,
        overhead: &ImagePlane<T>,
        theta0: T,
    ) -> Result<(LocalizationResult<T>, CorrelationSurface<T>)> {
        let start = Instant::now();
        let s = &self.settings;
        if radar.grid() != &s.grid || overhead.grid() != &s.grid {
            return Err(Error::shape(format!(
                "bundle was trained on a {}x{} grid at {} m/px",
                s.grid.height, s.grid.width, s.grid.metres_per_pixel
            )));
        }
        let theta_grid = ThetaGrid::centred(
            theta0,
            s.theta_count,
            T::cast(s.theta_spacing_rad),
        )?;
        let ensemble = make_ensemble(radar, &theta_grid)?;
        let alpha = infer_coefficients(&self.selector, &ensemble, overhead)?;
        let theta_hat = select_theta(&alpha, &theta_grid)?;
        let aligned = combine(&ensemble, &alpha)?;

        let gen_radar_in = if s.satellite_only {
            ImagePlane::zeros(aligned.channels(), *aligned.grid())
        } else {
            aligned.clone()
        };
        let generated = generate(&self.generator, &gen_radar_in, overhead)?;

        let ea_out = embed(&self.embedding, EmbedId::A, &generated)?;
        let eb_out = embed(&self.embedding, EmbedId::B, &aligned)?;
        // correlate so the argmax is the shift carrying the radar-aligned
        // image onto the overhead pose
        let surface = correlate_fft(&eb_out, &ea_out, &s.space)?;

        let (px, py) = hard_argmax(&surface);
        let (x_px, y_px) = if s.subpixel_refine {
            refine_subpixel(&surface, T::cast(s.temperature), s.refine_window)?
        } else {
            (T::cast(px as f64), T::cast(py as f64))
        };
        let ratio = peak_ratio(&surface, s.peak_exclusion);
        let peak_score = {
            let iy = (py - s.space.y_min) as usize;
            let ix = (px - s.space.x_min) as usize;
            surface.scores()[(iy, ix)]
        };
        let (x_m, y_m) = pixels_to_metres((x_px, y_px), &s.grid);
        let estimate = SE2Offset::new(x_m, y_m, theta_hat)?;

        let result = LocalizationResult {
            estimate,
            alpha: alpha.values().to_vec(),
            peak_score,
            peak_ratio: ratio,
            ambiguous: ratio < T::cast(s.ambiguity_ratio),
            latency_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        Ok((result, surface))
    }
}

impl<T: Real> Localizer<T> for ModelBundle<T> {
    fn localize(
        &self,
        radar: &ImagePlane<T>,
        overhead: &ImagePlane<T>,
        theta0: T,
    ) -> Result<LocalizationResult<T>> {
        self.localize_full(radar, overhead, theta0).map(|(r, _)| r)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::embed::EmbedHyper;
    use crate::generator::GeneratorHyper;
    use crate::selector::SelectorHyper;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy_bundle(seed: u64) -> ModelBundle<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let settings = InferenceSettings {
            grid: GridSpec::new(64, 64, 0.8665).unwrap(),
            theta_count: 5,
            theta_spacing_rad: 2f64.to_radians(),
            space: TranslationSpace::symmetric(16, 16).unwrap(),
            temperature: 1.0,
            subpixel_refine: false,
            refine_window: 2,
            peak_exclusion: 2,
            ambiguity_ratio: 1.02,
            satellite_only: false,
        };
        let selector = RotationSelectorModel::new(
            SelectorHyper {
                n_theta: 5,
                sat_channels: 3,
                radar_channels: 1,
                width: 2,
                group_channels: 1,
            },
            &mut rng,
        )
        .unwrap();
        let generator = GeneratorModel::new(
            GeneratorHyper {
                radar_channels: 1,
                sat_channels: 3,
                width: 2,
            },
            &mut rng,
        )
        .unwrap();
        let embedding = EmbeddingModel::new(
            EmbedHyper {
                in_channels: 1,
                width: 2,
                input_height: 64,
                input_width: 64,
            },
            &mut rng,
        )
        .unwrap();
        ModelBundle::new(selector, generator, embedding, settings).unwrap()
    }

    #[test]
    fn localize_is_deterministic_and_in_range() {
        use crate::world::{sample_pair, SensorParams, WorldModel};
        let bundle = toy_bundle(1);
        let world = WorldModel::generate(8, 600.0);
        let grid = bundle.settings.grid;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sample: crate::world::DatasetSample<f32> =
            sample_pair(&world, &mut rng, &grid, &SensorParams::default()).unwrap();

        let theta0 = sample.initial_estimate.theta;
        let a = bundle
            .localize(&sample.radar, &sample.overhead, theta0)
            .unwrap();
        let b = bundle
            .localize(&sample.radar, &sample.overhead, theta0)
            .unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.alpha, b.alpha);

        // estimate stays inside the configured search spaces
        let m = grid.metres_per_pixel as f32;
        let s = &bundle.settings.space;
        assert!(bundle.settings.contains_theta(theta0, a.estimate.theta));
        assert!(s.contains((a.estimate.x / m) as f64, (a.estimate.y / m) as f64));
        assert!(a.latency_ms >= 0.0);
        assert_eq!(a.alpha.len(), 5);
    }

    impl InferenceSettings {
        fn contains_theta(&self, theta0: f32, theta: f32) -> bool {
            let half = (self.theta_count - 1) as f64 / 2.0 * self.theta_spacing_rad;
            crate::geometry::angle_diff(theta as f64, theta0 as f64).abs() <= half + 1e-6
        }
    }

    #[test]
    fn wrong_grid_is_rejected() {
        let bundle = toy_bundle(3);
        let wrong = GridSpec::new(128, 128, 0.8665).unwrap();
        let radar = ImagePlane::<f32>::zeros(1, wrong);
        let overhead = ImagePlane::<f32>::zeros(3, wrong);
        assert!(bundle.localize(&radar, &overhead, 0.0).is_err());
    }

    #[test]
    fn bundle_validation_catches_mismatches() {
        let b = toy_bundle(4);
        let mut bad = b.settings.clone();
        bad.theta_count = 7;
        assert!(
            ModelBundle::new(b.selector.clone(), b.generator.clone(), b.embedding.clone(), bad)
                .is_err()
        );
    }
}
