//! Multi-channel rasters and the SE(2) image warps built on them.

use ndarray::{Array3, ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, ThetaGrid};
use crate::scalar::Real;

/// A single- or multi-channel raster with values in `[0, 1]`, laid out as
/// `(channels, rows, cols)`, plus its pixel-to-metre mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane<T: Real> {
    data: Array3<T>,
    grid: GridSpec,
}

impl<T: Real> ImagePlane<T> {
    /// Wrap a raster, checking the shape against `grid` and the value range.
    pub fn new(data: Array3<T>, grid: GridSpec) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c == 0 {
            return Err(Error::invalid("ImagePlane needs at least one channel"));
        }
        if h != grid.height || w != grid.width {
            return Err(Error::shape(format!(
                "raster is {h}x{w} but grid says {}x{}",
                grid.height, grid.width
            )));
        }
        let one = T::one();
        for &v in data.iter() {
            if !v.is_finite() || v < T::zero() || v > one {
                return Err(Error::invalid(format!(
                    "ImagePlane values must be finite and in [0, 1], got {v}"
                )));
            }
        }
        Ok(Self { data, grid })
    }

    /// All-zero raster.
    pub fn zeros(channels: usize, grid: GridSpec) -> Self {
        Self {
            data: Array3::zeros((channels, grid.height, grid.width)),
            grid,
        }
    }

    pub(crate) fn from_raw_unchecked(data: Array3<T>, grid: GridSpec) -> Self {
        debug_assert_eq!(data.dim().1, grid.height);
        debug_assert_eq!(data.dim().2, grid.width);
        Self { data, grid }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn data(&self) -> &Array3<T> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<T> {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> ArrayView2<'_, T> {
        self.data.index_axis(ndarray::Axis(0), c)
    }

    pub fn channel_mut(&mut self, c: usize) -> ArrayViewMut2<'_, T> {
        self.data.index_axis_mut(ndarray::Axis(0), c)
    }

    /// Largest absolute difference to another raster of the same shape.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        let mut m = T::zero();
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let d = (*a - *b).abs();
            if d > m {
                m = d;
            }
        }
        m
    }
}

/// Rotate image content by `theta` (counter-clockwise in `(x, y)` axes) about
/// the exact image centre. Bilinear resampling, zero fill outside the source.
///
/// `theta == 0` is an exact identity.
pub fn rotate_about_center<T: Real>(img: &ImagePlane<T>, theta: T) -> Result<ImagePlane<T>> {
    if !theta.is_finite() {
        return Err(Error::invalid("rotation angle must be finite"));
    }
    if theta == T::zero() {
        return Ok(img.clone());
    }
    let (c, h, w) = img.data.dim();
    let (cx, cy) = img.grid.centre();
    let cx = T::cast(cx);
    let cy = T::cast(cy);
    // Inverse map: output pixel p samples the source at R(-theta) (p - c) + c.
    let (s, co) = (theta.sin(), theta.cos());
    let mut out = Array3::zeros((c, h, w));
    for row in 0..h {
        let y = T::cast(row as f64) - cy;
        for col in 0..w {
            let x = T::cast(col as f64) - cx;
            let sx = co * x + s * y + cx;
            let sy = co * y - s * x + cy;
            for ch in 0..c {
                out[(ch, row, col)] = bilinear(&img.data, ch, sx, sy, h, w);
            }
        }
    }
    Ok(ImagePlane::from_raw_unchecked(out, img.grid))
}

#[inline]
fn bilinear<T: Real>(data: &Array3<T>, ch: usize, sx: T, sy: T, h: usize, w: usize) -> T {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let x0 = x0.to_f64() as i64;
    let y0 = y0.to_f64() as i64;
    let one = T::one();

    let fetch = |yy: i64, xx: i64| -> T {
        if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
            T::zero()
        } else {
            data[(ch, yy as usize, xx as usize)]
        }
    };

    let v00 = fetch(y0, x0);
    let v01 = fetch(y0, x0 + 1);
    let v10 = fetch(y0 + 1, x0);
    let v11 = fetch(y0 + 1, x0 + 1);
    let top = v00 * (one - fx) + v01 * fx;
    let bot = v10 * (one - fx) + v11 * fx;
    let v = top * (one - fy) + bot * fy;
    // Convex combination of in-range values; clamp away float dust.
    v.max(T::zero()).min(one)
}

/// Shift image content by an integer pixel offset `(dx, dy)`; the vacated
/// region is zero-filled. Exactly invertible on the overlap.
pub fn translate<T: Real>(img: &ImagePlane<T>, dx: i64, dy: i64) -> Result<ImagePlane<T>> {
    let (c, h, w) = img.data.dim();
    if dx.unsigned_abs() as usize >= w || dy.unsigned_abs() as usize >= h {
        return Err(Error::invalid(format!(
            "translation ({dx}, {dy}) exceeds image extent {h}x{w}"
        )));
    }
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        for row in 0..h {
            let src_row = row as i64 - dy;
            if src_row < 0 || src_row >= h as i64 {
                continue;
            }
            for col in 0..w {
                let src_col = col as i64 - dx;
                if src_col < 0 || src_col >= w as i64 {
                    continue;
                }
                out[(ch, row, col)] = img.data[(ch, src_row as usize, src_col as usize)];
            }
        }
    }
    Ok(ImagePlane::from_raw_unchecked(out, img.grid))
}

/// The stack of rotated copies of one image, paired with the angle each
/// member was rotated by.
#[derive(Debug, Clone)]
pub struct RotationEnsemble<T: Real> {
    members: Vec<ImagePlane<T>>,
    thetas: Vec<T>,
}

impl<T: Real> RotationEnsemble<T> {
    /// Pair up members and angles directly. Lengths must match; members must
    /// share one grid.
    pub fn from_parts(members: Vec<ImagePlane<T>>, thetas: Vec<T>) -> Result<Self> {
        if members.is_empty() || members.len() != thetas.len() {
            return Err(Error::invalid(
                "ensemble needs equally many members and angles, at least one",
            ));
        }
        let grid = *members[0].grid();
        if members.iter().any(|m| *m.grid() != grid) {
            return Err(Error::shape("ensemble members must share one grid"));
        }
        if thetas.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("ensemble angles must be finite"));
        }
        Ok(Self { members, thetas })
    }

    pub fn members(&self) -> &[ImagePlane<T>] {
        &self.members
    }

    pub fn thetas(&self) -> &[T] {
        &self.thetas
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn grid(&self) -> &GridSpec {
        self.members[0].grid()
    }

    /// Member indices ordered by ascending angle (stable). This is the
    /// canonical order fed to the rotation selector.
    pub fn sorted_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.thetas.len()).collect();
        idx.sort_by(|&a, &b| {
            self.thetas[a]
                .partial_cmp(&self.thetas[b])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        idx
    }
}

/// Rotate `img` by every angle of `grid`, in grid order.
pub fn make_ensemble<T: Real>(
    img: &ImagePlane<T>,
    grid: &ThetaGrid<T>,
) -> Result<RotationEnsemble<T>> {
    let members = grid
        .values()
        .iter()
        .map(|&t| rotate_about_center(img, t))
        .collect::<Result<Vec<_>>>()?;
    RotationEnsemble::from_parts(members, grid.values().to_vec())
}
