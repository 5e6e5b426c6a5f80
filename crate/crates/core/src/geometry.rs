//! SE(2) pose offsets and the discretized search spaces used by the pipeline.
//!
//! Axis convention, used everywhere in this crate: `x` increases with image
//! columns (east-positive), `y` increases with image rows, and a positive
//! rotation angle turns counter-clockwise in those `(x, y)` axes. Warps are
//! defined about the exact image centre `((W-1)/2, (H-1)/2)`.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle<T: Real>(theta: T) -> T {
    let pi = T::cast(std::f64::consts::PI);
    let two_pi = pi + pi;
    let mut a = theta % two_pi;
    if a <= -pi {
        a = a + two_pi;
    } else if a > pi {
        a = a - two_pi;
    }
    a
}

/// Difference `a - b` wrapped into `(-pi, pi]`.
pub fn angle_diff<T: Real>(a: T, b: T) -> T {
    wrap_angle(a - b)
}

/// An SE(2) offset `(x, y, theta)`: metres east, metres south (row-positive),
/// and radians counter-clockwise, with `theta` normalized into `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SE2Offset<T: Real> {
    pub x: T,
    pub y: T,
    pub theta: T,
}

impl<T: Real> SE2Offset<T> {
    pub fn new(x: T, y: T, theta: T) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() || !theta.is_finite() {
            return Err(Error::invalid(format!(
                "SE2Offset components must be finite, got ({x}, {y}, {theta})"
            )));
        }
        Ok(Self {
            x,
            y,
            theta: wrap_angle(theta),
        })
    }

    pub fn identity() -> Self {
        Self {
            x: T::zero(),
            y: T::zero(),
            theta: T::zero(),
        }
    }

    /// Apply this pose's rotation to a point `(px, py)`.
    pub fn rotate_point(&self, px: T, py: T) -> (T, T) {
        let (s, c) = (self.theta.sin(), self.theta.cos());
        (c * px - s * py, s * px + c * py)
    }
}

/// Pixel grid geometry: raster dimensions plus the pixel-to-metre scale.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub metres_per_pixel: f64,
}

/// Shared raster resolution of the bundled datasets.
pub const DEFAULT_METRES_PER_PIXEL: f64 = 0.8665;
/// Default raster side length in pixels.
pub const DEFAULT_IMAGE_SIZE: usize = 256;

impl GridSpec {
    pub fn new(height: usize, width: usize, metres_per_pixel: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("GridSpec dimensions must be positive"));
        }
        if !(metres_per_pixel > 0.0) || !metres_per_pixel.is_finite() {
            return Err(Error::invalid(format!(
                "GridSpec metres_per_pixel must be positive and finite, got {metres_per_pixel}"
            )));
        }
        Ok(Self {
            height,
            width,
            metres_per_pixel,
        })
    }

    /// Square grid with the default resolution.
    pub fn square(side: usize) -> Result<Self> {
        Self::new(side, side, DEFAULT_METRES_PER_PIXEL)
    }

    /// Exact warp centre `(cx, cy)` in pixel coordinates.
    pub fn centre(&self) -> (f64, f64) {
        (
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        )
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            height: DEFAULT_IMAGE_SIZE,
            width: DEFAULT_IMAGE_SIZE,
            metres_per_pixel: DEFAULT_METRES_PER_PIXEL,
        }
    }
}

/// Convert a pixel-valued offset into metres using the grid scale.
pub fn pixels_to_metres<T: Real>(offset_px: (T, T), grid: &GridSpec) -> (T, T) {
    let m = T::cast(grid.metres_per_pixel);
    (offset_px.0 * m, offset_px.1 * m)
}

/// Ordered, uniformly spaced rotation hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaGrid<T: Real> {
    values: Vec<T>,
    spacing: T,
}

/// Default hypothesis count: a `+-pi/8` span at one-degree spacing, both
/// endpoints included.
pub const DEFAULT_THETA_COUNT: usize = 46;
/// Default hypothesis spacing of one degree.
pub const DEFAULT_THETA_SPACING: f64 = std::f64::consts::PI / 180.0;

impl<T: Real> ThetaGrid<T> {
    /// Build from explicit values. They must be strictly increasing with
    /// uniform spacing (1e-9 relative tolerance).
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("ThetaGrid must be nonempty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("ThetaGrid values must be finite"));
        }
        let spacing = if values.len() == 1 {
            T::zero()
        } else {
            let d = values[1] - values[0];
            if d <= T::zero() {
                return Err(Error::invalid("ThetaGrid must be strictly increasing"));
            }
            // rounding in the scalar type accumulates with the magnitude of
            // the values, so the tolerance scales with epsilon
            let tol = T::cast(64.0)
                * T::epsilon()
                * (values[0].abs() + values[values.len() - 1].abs() + T::one());
            for w in values.windows(2) {
                let step = w[1] - w[0];
                if (step - d).abs() > tol.max(T::cast(1e-12)) {
                    return Err(Error::invalid("ThetaGrid spacing must be uniform"));
                }
            }
            d
        };
        Ok(Self { values, spacing })
    }

    /// `count` values centred on `centre` with the given spacing, so the grid
    /// spans `centre +- (count-1)/2 * spacing` inclusive of both endpoints.
    pub fn centred(centre: T, count: usize, spacing: T) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("ThetaGrid count must be positive"));
        }
        if count > 1 && spacing <= T::zero() {
            return Err(Error::invalid("ThetaGrid spacing must be positive"));
        }
        let half = T::cast((count - 1) as f64 / 2.0);
        let start = centre - half * spacing;
        let values = (0..count)
            .map(|i| start + T::cast(i as f64) * spacing)
            .collect();
        Self::new(values)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spacing(&self) -> T {
        self.spacing
    }

    /// Index of the grid value closest to `theta` (angular distance).
    pub fn nearest_index(&self, theta: T) -> usize {
        let mut best = 0usize;
        let mut best_d = T::infinity();
        for (i, &v) in self.values.iter().enumerate() {
            let d = angle_diff(theta, v).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// Integer translation search window, symmetric about zero, one hypothesis
/// per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TranslationSpace {
    pub x_min: i64,
    pub x_max: i64,
    pub y_min: i64,
    pub y_max: i64,
}

/// Default translation search half-extent in pixels.
pub const DEFAULT_SEARCH_RADIUS: i64 = 128;

impl TranslationSpace {
    pub fn symmetric(radius_x: i64, radius_y: i64) -> Result<Self> {
        if radius_x < 0 || radius_y < 0 {
            return Err(Error::invalid("search radius must be nonnegative"));
        }
        Ok(Self {
            x_min: -radius_x,
            x_max: radius_x,
            y_min: -radius_y,
            y_max: radius_y,
        })
    }

    pub fn count_x(&self) -> usize {
        (self.x_max - self.x_min + 1) as usize
    }

    pub fn count_y(&self) -> usize {
        (self.y_max - self.y_min + 1) as usize
    }

    pub fn contains(&self, dx: f64, dy: f64) -> bool {
        dx >= self.x_min as f64
            && dx <= self.x_max as f64
            && dy >= self.y_min as f64
            && dy <= self.y_max as f64
    }
}

impl Default for TranslationSpace {
    fn default() -> Self {
        Self::symmetric(DEFAULT_SEARCH_RADIUS, DEFAULT_SEARCH_RADIUS).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn wrap_into_half_open_interval() {
        assert_relative_eq!(wrap_angle(3.0 * std::f64::consts::PI), std::f64::consts::PI);
        assert_relative_eq!(wrap_angle(-std::f64::consts::PI), std::f64::consts::PI);
        assert_relative_eq!(wrap_angle(0.25), 0.25);
        let w = wrap_angle(7.5f64);
        assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
    }

    #[test]
    fn se2_rejects_non_finite() {
        assert!(SE2Offset::new(f64::NAN, 0.0, 0.0).is_err());
        assert!(SE2Offset::new(0.0, f64::INFINITY, 0.0).is_err());
        let p = SE2Offset::new(1.0, 2.0, 4.0).unwrap();
        assert!(p.theta > -std::f64::consts::PI && p.theta <= std::f64::consts::PI);
    }

    #[test]
    fn grid_spec_validation() {
        assert!(GridSpec::new(0, 4, 1.0).is_err());
        assert!(GridSpec::new(4, 4, 0.0).is_err());
        assert!(GridSpec::new(4, 4, -1.0).is_err());
        let g = GridSpec::default();
        assert_eq!((g.height, g.width), (256, 256));
        assert_relative_eq!(g.metres_per_pixel, 0.8665);
    }

    #[test]
    fn pixels_to_metres_matches_resolution() {
        let g = GridSpec::default();
        let (mx, my) = pixels_to_metres((25.0f64, 0.0), &g);
        assert_relative_eq!(mx, 21.6625, epsilon = 1e-12);
        assert_relative_eq!(my, 0.0);
        assert_eq!(pixels_to_metres((0.0f64, 0.0), &g), (0.0, 0.0));
        let (mx, my) = pixels_to_metres((-128.0f64, 128.0), &g);
        assert_relative_eq!(mx, -110.912, epsilon = 1e-9);
        assert_relative_eq!(my, 110.912, epsilon = 1e-9);
    }

    #[test]
    fn theta_grid_default_span() {
        let g = ThetaGrid::centred(
            0.3f64,
            DEFAULT_THETA_COUNT,
            DEFAULT_THETA_SPACING,
        )
        .unwrap();
        assert_eq!(g.len(), 46);
        assert_relative_eq!(g.values()[0], 0.3 - std::f64::consts::PI / 8.0, epsilon = 1e-12);
        assert_relative_eq!(
            *g.values().last().unwrap(),
            0.3 + std::f64::consts::PI / 8.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn theta_grid_rejects_irregular() {
        assert!(ThetaGrid::<f64>::new(vec![]).is_err());
        assert!(ThetaGrid::new(vec![0.0, 0.1, 0.3]).is_err());
        assert!(ThetaGrid::new(vec![0.2, 0.1]).is_err());
        assert!(ThetaGrid::new(vec![0.0f64]).is_ok());
    }

    #[test]
    fn nearest_index_wraps() {
        let g = ThetaGrid::centred(3.1f64, 5, 0.05).unwrap();
        // 3.1 + 0.1 wraps past pi; nearest grid entry is still the top one.
        assert_eq!(g.nearest_index(wrap_angle(3.2)), 4);
        assert_eq!(g.nearest_index(3.1), 2);
    }

    #[test]
    fn translation_space_counts() {
        let s = TranslationSpace::default();
        assert_eq!(s.count_x(), 257);
        assert_eq!(s.count_y(), 257);
        assert!(s.contains(-128.0, 128.0));
        assert!(!s.contains(-129.0, 0.0));
    }
}
