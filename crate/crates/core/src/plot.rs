//! Bare-bones chart rendering to PNG; enough for error histograms and the
//! threshold-ratio curve without pulling in a plotting stack.

use image::{Rgb, RgbImage};
use std::path::Path;

use crate::error::{Error, Result};

const W: u32 = 640;
const H: u32 = 480;
const MARGIN: u32 = 48;
const BG: Rgb<u8> = Rgb([255, 255, 255]);
const FG: Rgb<u8> = Rgb([30, 30, 30]);
const BAR: Rgb<u8> = Rgb([70, 110, 180]);

fn blank() -> RgbImage {
    let mut img = RgbImage::from_pixel(W, H, BG);
    // axes
    for x in MARGIN..W - MARGIN {
        img.put_pixel(x, H - MARGIN, FG);
    }
    for y in MARGIN..H - MARGIN {
        img.put_pixel(MARGIN, y, FG);
    }
    img
}

fn save(img: RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(Error::from)
}

/// Histogram bars over uniform bins.
pub fn bar_chart(path: &Path, counts: &[usize]) -> Result<()> {
    let mut img = blank();
    if counts.is_empty() {
        return save(img, path);
    }
    let max = counts.iter().copied().max().unwrap_or(1).max(1) as f64;
    let span = (W - 2 * MARGIN) as f64 / counts.len() as f64;
    for (i, &c) in counts.iter().enumerate() {
        let h = ((c as f64 / max) * (H - 2 * MARGIN) as f64) as u32;
        let x0 = MARGIN + (i as f64 * span) as u32 + 1;
        let x1 = MARGIN + (((i + 1) as f64) * span) as u32;
        for x in x0..x1.min(W - MARGIN) {
            for y in (H - MARGIN - h)..(H - MARGIN) {
                img.put_pixel(x, y, BAR);
            }
        }
    }
    save(img, path)
}

/// Polyline over `(x, y)` points; x ascending, y in `[0, 1]` is typical but
/// any range works.
pub fn line_chart(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let mut img = blank();
    if points.len() < 2 {
        return save(img, path);
    }
    let (x0, x1) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.0), b.max(p.0))
        });
    let (y0, y1) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.1), b.max(p.1))
        });
    let xr = (x1 - x0).max(1e-12);
    let yr = (y1 - y0).max(1e-12);
    let to_px = |p: (f64, f64)| -> (i64, i64) {
        let x = MARGIN as f64 + (p.0 - x0) / xr * (W - 2 * MARGIN) as f64;
        let y = (H - MARGIN) as f64 - (p.1 - y0) / yr * (H - 2 * MARGIN) as f64;
        (x as i64, y as i64)
    };
    for w in points.windows(2) {
        let (ax, ay) = to_px(w[0]);
        let (bx, by) = to_px(w[1]);
        let steps = (bx - ax).abs().max((by - ay).abs()).max(1);
        for s in 0..=steps {
            let x = ax + (bx - ax) * s / steps;
            let y = ay + (by - ay) * s / steps;
            if (0..W as i64).contains(&x) && (0..H as i64).contains(&y) {
                img.put_pixel(x as u32, y as u32, FG);
            }
        }
    }
    save(img, path)
}
