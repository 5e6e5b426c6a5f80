//! Cross-modal SE(2) localisation of a ground radar against overhead imagery.
//!
//! Given an overhead image and a radar image with an unknown rotation and
//! translation between them, the pipeline recovers the offset in three
//! learned stages: a rotation selector scores an ensemble of rotated radar
//! images against the overhead view, a conditional generator synthesises a
//! radar-appearance image at the overhead pose, and a pair of embedding
//! networks project both images into a joint space where the translation is
//! found as the peak of an FFT correlation surface.
//!
//! All numeric code is generic over the scalar type ([`Real`]); `f32` is the
//! training default and `f64` backs the verification suites.

pub mod checkpoint;
pub mod config;
pub mod correlation;
pub mod dataset;
pub mod embed;
pub mod error;
pub mod eval;
pub mod generator;
pub mod geometry;
pub mod image;
pub mod localize;
pub mod nn;
pub mod plot;
pub mod scalar;
pub mod selector;
pub mod tiles;
pub mod train;
pub mod world;

pub use error::{Error, Result};
pub use geometry::{
    pixels_to_metres, wrap_angle, GridSpec, SE2Offset, ThetaGrid, TranslationSpace,
};
pub use image::{make_ensemble, rotate_about_center, translate, ImagePlane, RotationEnsemble};
pub use scalar::Real;

/// Scalar used by the shipped binaries and defaults.
pub type DefaultScalar = f32;

/// [`ImagePlane`] at the default scalar.
pub type Image = ImagePlane<DefaultScalar>;
/// [`SE2Offset`] at the default scalar.
pub type Offset = SE2Offset<DefaultScalar>;
