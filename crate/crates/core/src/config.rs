//! Flat key-value training configuration.
//!
//! One `key = value` pair per line, `#` starts a comment, unknown keys are
//! rejected. All keys are optional; the defaults below describe the
//! full-scale setup and the toy experiment overrides them.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, ThetaGrid, TranslationSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    PretrainRot,
    PretrainGen,
    EndToEnd,
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain_rot" => Ok(Stage::PretrainRot),
            "pretrain_gen" => Ok(Stage::PretrainGen),
            "end_to_end" => Ok(Stage::EndToEnd),
            other => Err(Error::invalid(format!(
                "stage must be pretrain_rot | pretrain_gen | end_to_end, got `{other}`"
            ))),
        }
    }
}

/// Everything a training stage needs beyond the dataset itself.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub stage: Stage,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub image_size: usize,
    pub metres_per_pixel: f64,
    pub n_theta: usize,
    pub theta_spacing_deg: f64,
    pub search_radius_px: i64,
    pub temperature: f64,
    pub selector_width: usize,
    pub selector_group: usize,
    pub generator_width: usize,
    pub embed_width: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub buffer_m: f64,
    /// Stage-3 diagnostic: keep the embedding parameters fixed.
    pub freeze_embeddings: bool,
    /// Harness ablation: blank the radar conditioning of the generator so it
    /// sees only the overhead image.
    pub ablation_satellite_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::PretrainRot,
            seed: 0,
            epochs: 4,
            batch_size: 8,
            learning_rate: 2e-4,
            image_size: crate::geometry::DEFAULT_IMAGE_SIZE,
            metres_per_pixel: crate::geometry::DEFAULT_METRES_PER_PIXEL,
            n_theta: crate::geometry::DEFAULT_THETA_COUNT,
            theta_spacing_deg: 1.0,
            search_radius_px: crate::geometry::DEFAULT_SEARCH_RADIUS,
            temperature: 1.0,
            selector_width: 8,
            selector_group: 4,
            generator_width: 8,
            embed_width: 8,
            train_fraction: 0.9,
            val_fraction: 0.1,
            buffer_m: 0.0,
            freeze_embeddings: false,
            ablation_satellite_only: false,
        }
    }
}

impl TrainConfig {
    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse_str(&text).map_err(|e| match e {
            Error::InvalidArgument(detail) => Error::Parse {
                what: "config",
                path: path.to_path_buf(),
                detail,
            },
            other => other,
        })
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::invalid(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |e: &dyn std::fmt::Display| {
                Error::invalid(format!("line {}: {key}: {e}", lineno + 1))
            };
            match key {
                "stage" => cfg.stage = value.parse()?,
                "seed" => cfg.seed = value.parse().map_err(|e| bad(&e))?,
                "epochs" => cfg.epochs = value.parse().map_err(|e| bad(&e))?,
                "batch_size" => cfg.batch_size = value.parse().map_err(|e| bad(&e))?,
                "learning_rate" => cfg.learning_rate = value.parse().map_err(|e| bad(&e))?,
                "image_size" => cfg.image_size = value.parse().map_err(|e| bad(&e))?,
                "metres_per_pixel" => {
                    cfg.metres_per_pixel = value.parse().map_err(|e| bad(&e))?
                }
                "n_theta" => cfg.n_theta = value.parse().map_err(|e| bad(&e))?,
                "theta_spacing_deg" => {
                    cfg.theta_spacing_deg = value.parse().map_err(|e| bad(&e))?
                }
                "search_radius_px" => {
                    cfg.search_radius_px = value.parse().map_err(|e| bad(&e))?
                }
                "temperature" => cfg.temperature = value.parse().map_err(|e| bad(&e))?,
                "selector_width" => cfg.selector_width = value.parse().map_err(|e| bad(&e))?,
                "selector_group" => cfg.selector_group = value.parse().map_err(|e| bad(&e))?,
                "generator_width" => {
                    cfg.generator_width = value.parse().map_err(|e| bad(&e))?
                }
                "embed_width" => cfg.embed_width = value.parse().map_err(|e| bad(&e))?,
                "train_fraction" => cfg.train_fraction = value.parse().map_err(|e| bad(&e))?,
                "val_fraction" => cfg.val_fraction = value.parse().map_err(|e| bad(&e))?,
                "buffer_m" => cfg.buffer_m = value.parse().map_err(|e| bad(&e))?,
                "freeze_embeddings" => {
                    cfg.freeze_embeddings = value.parse().map_err(|e| bad(&e))?
                }
                "ablation_satellite_only" => {
                    cfg.ablation_satellite_only = value.parse().map_err(|e| bad(&e))?
                }
                other => {
                    return Err(Error::invalid(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.temperature > 0.0) {
            return Err(Error::invalid(
                "learning_rate and temperature must be positive",
            ));
        }
        if self.n_theta == 0 || self.theta_spacing_deg <= 0.0 {
            return Err(Error::invalid("theta grid must be nonempty with positive spacing"));
        }
        if self.selector_width == 0
            || self.selector_group == 0
            || self.generator_width == 0
            || self.embed_width == 0
        {
            return Err(Error::invalid("network widths must be positive"));
        }
        if self.train_fraction < 0.0
            || self.val_fraction < 0.0
            || self.train_fraction + self.val_fraction > 1.0 + 1e-9
        {
            return Err(Error::invalid("train/val fractions must be in [0, 1]"));
        }
        if self.search_radius_px <= 0 || self.search_radius_px > self.image_size as i64 {
            return Err(Error::invalid(
                "search_radius_px must be positive and at most the image size",
            ));
        }
        self.grid()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.image_size, self.image_size, self.metres_per_pixel)
    }

    pub fn theta_spacing_rad(&self) -> f64 {
        self.theta_spacing_deg.to_radians()
    }

    pub fn theta_grid_at(&self, theta0: f64) -> Result<ThetaGrid<f64>> {
        ThetaGrid::centred(theta0, self.n_theta, self.theta_spacing_rad())
    }

    pub fn space(&self) -> Result<TranslationSpace> {
        TranslationSpace::symmetric(self.search_radius_px, self.search_radius_px)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_describe_the_full_scale_setup() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.image_size, 256);
        assert_eq!(cfg.n_theta, 46);
        assert_eq!(cfg.search_radius_px, 128);
        assert_eq!(cfg.batch_size, 8);
        assert!((cfg.learning_rate - 2e-4).abs() < 1e-12);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn parses_known_keys_and_comments() {
        let cfg = TrainConfig::parse_str(
            "# toy setup\nstage = end_to_end\nseed = 7\nimage_size = 64\n\
             n_theta = 9\ntheta_spacing_deg = 2.0\nsearch_radius_px = 16 # px\n",
        )
        .unwrap();
        assert_eq!(cfg.stage, Stage::EndToEnd);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.image_size, 64);
        assert_eq!(cfg.n_theta, 9);
        assert_eq!(cfg.search_radius_px, 16);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = TrainConfig::parse_str("learning_rat = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(TrainConfig::parse_str("epochs = 0\n").is_err());
        assert!(TrainConfig::parse_str("learning_rate = -1\n").is_err());
        assert!(TrainConfig::parse_str("stage = warmup\n").is_err());
        assert!(TrainConfig::parse_str("search_radius_px = 500\n").is_err());
    }
}
