//! Evaluation: per-sample errors, mean-error summary, threshold-ratio
//! curves, histograms-as-files, and the latency harness.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::angle_diff;
use crate::image::ImagePlane;
use crate::localize::Localizer;
use crate::plot;
use crate::scalar::Real;
use crate::world::DatasetSample;

/// Componentwise absolute errors of one localisation.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SampleError {
    pub id: u64,
    pub ex_m: f64,
    pub ey_m: f64,
    pub etheta_deg: f64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct RatioPoint {
    pub e_th_m: f64,
    pub ratio: f64,
}

/// Summary over a test set. Means are arithmetic means of the per-sample
/// absolute errors, so they are recomputable from the table.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub mean_ex_m: f64,
    pub mean_ey_m: f64,
    pub mean_etheta_deg: f64,
    pub latency_mean_ms: f64,
    pub latency_p95_ms: f64,
    pub samples: Vec<SampleError>,
    pub ratio_curve: Vec<RatioPoint>,
}

impl MetricsReport {
    /// Means recomputed from the per-sample table.
    pub fn recomputed_means(&self) -> (f64, f64, f64) {
        let n = self.samples.len().max(1) as f64;
        (
            self.samples.iter().map(|s| s.ex_m).sum::<f64>() / n,
            self.samples.iter().map(|s| s.ey_m).sum::<f64>() / n,
            self.samples.iter().map(|s| s.etheta_deg).sum::<f64>() / n,
        )
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("serializing report: {e}")))?;
        std::fs::write(path, json)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Heading cap used by the threshold-ratio curve, degrees.
pub const DEFAULT_THETA_CAP_DEG: f64 = 5.0;

/// Thresholds the default ratio curve is sampled at: 0.5 m steps to 25 m.
pub fn default_thresholds() -> Vec<f64> {
    (1..=50).map(|i| i as f64 * 0.5).collect()
}

/// Fraction of samples with `e_x < e_th`, `e_y < e_th`, and
/// `e_theta < theta_cap`, per threshold.
pub fn ratio_curve(samples: &[SampleError], e_th: &[f64], theta_cap_deg: f64) -> Vec<RatioPoint> {
    let n = samples.len().max(1) as f64;
    e_th.iter()
        .map(|&t| {
            let hits = samples
                .iter()
                .filter(|s| s.ex_m < t && s.ey_m < t && s.etheta_deg < theta_cap_deg)
                .count();
            RatioPoint {
                e_th_m: t,
                ratio: hits as f64 / n,
            }
        })
        .collect()
}

/// Run the localizer over every sample and assemble the report.
pub fn evaluate<T: Real, L: Localizer<T>>(
    localizer: &L,
    samples: &[DatasetSample<T>],
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty dataset"));
    }
    let per: Vec<SampleError> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| -> Result<SampleError> {
            let r = localizer.localize(&s.radar, &s.overhead, s.initial_estimate.theta)?;
            Ok(SampleError {
                id: i as u64,
                ex_m: (r.estimate.x - s.gt_offset.x).to_f64().abs(),
                ey_m: (r.estimate.y - s.gt_offset.y).to_f64().abs(),
                etheta_deg: angle_diff(r.estimate.theta, s.gt_offset.theta)
                    .to_f64()
                    .abs()
                    .to_degrees(),
                latency_ms: r.latency_ms,
            })
        })
        .collect::<Result<_>>()?;

    let n = per.len() as f64;
    let mut latencies: Vec<f64> = per.iter().map(|s| s.latency_ms).collect();
    latencies.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p95 = latencies[((0.95 * (latencies.len() as f64 - 1.0)).ceil() as usize)
        .min(latencies.len() - 1)];
    let curve = ratio_curve(&per, &default_thresholds(), DEFAULT_THETA_CAP_DEG);
    Ok(MetricsReport {
        mean_ex_m: per.iter().map(|s| s.ex_m).sum::<f64>() / n,
        mean_ey_m: per.iter().map(|s| s.ey_m).sum::<f64>() / n,
        mean_etheta_deg: per.iter().map(|s| s.etheta_deg).sum::<f64>() / n,
        latency_mean_ms: latencies.iter().sum::<f64>() / n,
        latency_p95_ms: p95,
        samples: per,
        ratio_curve: curve,
    })
}

/// Uniform-bin histogram over `[min, max]` of the values.
pub fn histogram(values: &[f64], bins: usize) -> (Vec<f64>, Vec<usize>) {
    assert!(bins > 0);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if values.is_empty() || !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo, lo + 1.0)
    } else {
        (lo, hi)
    };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    (edges, counts)
}

/// Write per-component error histograms (PNG + CSV) and the ratio curve.
/// Returns the files written.
pub fn export_histograms(
    report: &MetricsReport,
    bins: usize,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut written = Vec::new();
    let components: [(&str, Vec<f64>); 3] = [
        ("ex_m", report.samples.iter().map(|s| s.ex_m).collect()),
        ("ey_m", report.samples.iter().map(|s| s.ey_m).collect()),
        (
            "etheta_deg",
            report.samples.iter().map(|s| s.etheta_deg).collect(),
        ),
    ];
    for (name, values) in components {
        let (edges, counts) = histogram(&values, bins);
        let png = dir.join(format!("hist_{name}.png"));
        plot::bar_chart(&png, &counts)?;
        written.push(png);
        let csv = dir.join(format!("hist_{name}.csv"));
        let mut text = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in counts.iter().enumerate() {
            text.push_str(&format!("{:.6},{:.6},{c}\n", edges[i], edges[i + 1]));
        }
        std::fs::write(&csv, text)
            .map_err(|e| Error::io(format!("writing {}", csv.display()), e))?;
        written.push(csv);
    }
    let curve_png = dir.join("ratio_curve.png");
    plot::line_chart(
        &curve_png,
        &report
            .ratio_curve
            .iter()
            .map(|p| (p.e_th_m, p.ratio))
            .collect::<Vec<_>>(),
    )?;
    written.push(curve_png);
    Ok(written)
}

#[derive(Debug, Clone, Copy)]
pub struct LatencyStats {
    pub runs: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

/// Time `localize` alone, sequentially, on a fixed input pair.
pub fn bench_latency<T: Real, L: Localizer<T>>(
    localizer: &L,
    radar: &ImagePlane<T>,
    overhead: &ImagePlane<T>,
    theta0: T,
    runs: usize,
) -> Result<LatencyStats> {
    if runs == 0 {
        return Err(Error::invalid("latency bench needs at least one run"));
    }
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = std::time::Instant::now();
        let _ = localizer.localize(radar, overhead, theta0)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p95 = times[((0.95 * (times.len() as f64 - 1.0)).ceil() as usize).min(times.len() - 1)];
    Ok(LatencyStats {
        runs,
        mean_ms: times.iter().sum::<f64>() / runs as f64,
        p95_ms: p95,
    })
}
