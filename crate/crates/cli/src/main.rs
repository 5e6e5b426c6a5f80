//! Command-line surface of the localisation pipeline: dataset generation,
//! the three training stages, single-pair localisation, and evaluation.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use radloc::checkpoint;
use radloc::config::{Stage, TrainConfig};
use radloc::correlation::write_surface;
use radloc::dataset::{read_dataset, read_png_gray, read_png_rgb, write_dataset};
use radloc::eval::{bench_latency, evaluate, export_histograms};
use radloc::train::{pretrain_generator, pretrain_rotation, train_end_to_end, TrainData};
use radloc::world::{generate_route_dataset, SampleParams, SensorParams, WorldModel};
use radloc::{DefaultScalar, GridSpec};

type F = DefaultScalar;

#[derive(Parser)]
#[command(
    name = "radloc",
    about = "Cross-modal radar-to-overhead SE(2) localisation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired-modality dataset along a route.
    SynthGen {
        /// World and sampling seed.
        #[arg(long)]
        seed: u64,
        /// Number of samples to write.
        #[arg(long)]
        count: usize,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Square image side, pixels.
        #[arg(long, default_value_t = 256)]
        size: usize,
        /// Raster resolution, metres per pixel.
        #[arg(long, default_value_t = 0.8665)]
        mpp: f64,
        /// Bound on the artificial translation offset, pixels.
        #[arg(long, default_value_t = 25)]
        max_shift_px: i64,
        /// Half-range of the initial heading error, degrees.
        #[arg(long, default_value_t = 22.5)]
        theta0_range_deg: f64,
        /// World side length in metres; 0 picks a size that fits the grid.
        #[arg(long, default_value_t = 0.0)]
        world_extent: f64,
        /// Radar maximum range, metres; 0 scales with the image footprint.
        #[arg(long, default_value_t = 0.0)]
        max_range: f64,
        /// Multiplicative speckle level.
        #[arg(long, default_value_t = 0.08)]
        speckle: f64,
        /// Range-sensitivity falloff exponent.
        #[arg(long, default_value_t = 0.7)]
        falloff: f64,
        /// First route arclength fraction to sample from.
        #[arg(long, default_value_t = 0.0)]
        route_from: f64,
        /// Last route arclength fraction to sample to.
        #[arg(long, default_value_t = 1.0)]
        route_to: f64,
    },
    /// Pre-train the rotation selector.
    PretrainRot {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Training log CSV (default: <out>.log.csv).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Pre-train the conditional generator.
    PretrainGen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train all four networks end-to-end from the two pre-trained stages.
    TrainE2e {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Rotation selector checkpoint.
        #[arg(long)]
        ckpt_h: PathBuf,
        /// Generator checkpoint.
        #[arg(long)]
        ckpt_g: PathBuf,
        /// Output bundle path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Localise one radar/overhead pair.
    Localize {
        #[arg(long)]
        bundle: PathBuf,
        /// Overhead image (RGB png).
        #[arg(long)]
        overhead: PathBuf,
        /// Radar image (grayscale png).
        #[arg(long)]
        radar: PathBuf,
        /// Coarse heading prior, radians.
        #[arg(long)]
        theta0: f64,
        /// Write the correlation surface to this file.
        #[arg(long)]
        dump_surface: Option<PathBuf>,
    },
    /// Evaluate a bundle over a dataset directory.
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Metrics report (JSON).
        #[arg(long)]
        report: PathBuf,
        /// Directory for histogram/curve files.
        #[arg(long)]
        plots: Option<PathBuf>,
        /// Extra latency benchmark repetitions on the first sample.
        #[arg(long, default_value_t = 0)]
        bench: usize,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::SynthGen {
            seed,
            count,
            out,
            size,
            mpp,
            max_shift_px,
            theta0_range_deg,
            world_extent,
            max_range,
            speckle,
            falloff,
            route_from,
            route_to,
        } => {
            if count == 0 {
                bail!("--count must be positive");
            }
            let grid = GridSpec::new(size, size, mpp)?;
            let diag_half = mpp * ((size as f64 / 2.0) * std::f64::consts::SQRT_2 + 1.0);
            let extent = if world_extent > 0.0 {
                world_extent
            } else {
                4.0 * (diag_half + max_shift_px as f64 * mpp + 2.0) + 120.0
            };
            let sp = SensorParams {
                max_range: if max_range > 0.0 {
                    max_range
                } else {
                    1.1 * diag_half
                },
                speckle,
                occlusion: true,
                falloff,
            };
            let params = SampleParams {
                max_shift_px,
                theta0_half_range: theta0_range_deg.to_radians(),
            };
            let world = WorldModel::generate(seed, extent);
            let samples = generate_route_dataset::<F>(
                &world, seed, &grid, &sp, &params, count, route_from, route_to,
            )?;
            let manifest = write_dataset(&samples, &out)?;
            println!(
                "wrote {} samples ({}x{} @ {} m/px) to {}",
                manifest.len(),
                size,
                size,
                mpp,
                out.display()
            );
        }

        Command::PretrainRot { config, data, out, log } => {
            let cfg = TrainConfig::parse_file(&config)?;
            if cfg.stage != Stage::PretrainRot {
                bail!("config stage must be pretrain_rot");
            }
            let manifest = read_dataset(&data)?;
            let split = TrainData::<F>::from_manifest(&manifest, &cfg)?;
            println!(
                "pretrain-rot: {} train / {} val samples",
                split.train.len(),
                split.val.len()
            );
            let (model, report) = pretrain_rotation(&cfg, &split)?;
            checkpoint::save_selector(&model, &out)?;
            let log = log.unwrap_or_else(|| log_path(&out));
            report.write_csv(&log)?;
            println!(
                "val loss {:.5} -> {:.5}, rotation accuracy {:.1}%, checkpoint {}",
                report.val_initial(),
                report.val_final(),
                report.rotation_accuracy.unwrap_or(f64::NAN) * 100.0,
                out.display()
            );
        }

        Command::PretrainGen { config, data, out, log } => {
            let cfg = TrainConfig::parse_file(&config)?;
            if cfg.stage != Stage::PretrainGen {
                bail!("config stage must be pretrain_gen");
            }
            let manifest = read_dataset(&data)?;
            let split = TrainData::<F>::from_manifest(&manifest, &cfg)?;
            println!(
                "pretrain-gen: {} train / {} val samples",
                split.train.len(),
                split.val.len()
            );
            let (model, report) = pretrain_generator(&cfg, &split)?;
            checkpoint::save_generator(&model, &out)?;
            let log = log.unwrap_or_else(|| log_path(&out));
            report.write_csv(&log)?;
            println!(
                "val loss {:.5} -> {:.5}, checkpoint {}",
                report.val_initial(),
                report.val_final(),
                out.display()
            );
        }

        Command::TrainE2e {
            config,
            data,
            ckpt_h,
            ckpt_g,
            out,
            log,
        } => {
            let cfg = TrainConfig::parse_file(&config)?;
            if cfg.stage != Stage::EndToEnd {
                bail!("config stage must be end_to_end");
            }
            let selector = checkpoint::load_selector::<F>(&ckpt_h)
                .with_context(|| format!("loading {}", ckpt_h.display()))?;
            let generator = checkpoint::load_generator::<F>(&ckpt_g)
                .with_context(|| format!("loading {}", ckpt_g.display()))?;
            let manifest = read_dataset(&data)?;
            let split = TrainData::<F>::from_manifest(&manifest, &cfg)?;
            println!(
                "train-e2e: {} train / {} val samples",
                split.train.len(),
                split.val.len()
            );
            let (bundle, report) = train_end_to_end(&cfg, &split, selector, generator)?;
            checkpoint::save_bundle(&bundle, &out)?;
            let log = log.unwrap_or_else(|| log_path(&out));
            report.write_csv(&log)?;
            let last = report.steps.last();
            println!(
                "val loss {:.4} -> {:.4} px; grad norms h/g/eA/eB: {:.3e} {:.3e} {:.3e} {:.3e}",
                report.val_initial(),
                report.val_final(),
                last.map_or(0.0, |s| s.grad_h),
                last.map_or(0.0, |s| s.grad_g),
                last.map_or(0.0, |s| s.grad_ea),
                last.map_or(0.0, |s| s.grad_eb),
            );
            println!("bundle {}", out.display());
        }

        Command::Localize {
            bundle,
            overhead,
            radar,
            theta0,
            dump_surface,
        } => {
            let bundle = checkpoint::load_bundle::<F>(&bundle)?;
            let grid = bundle.settings.grid;
            let overhead = read_png_rgb::<F>(&overhead, &grid, 0)?;
            let radar = read_png_gray::<F>(&radar, &grid, 0)?;
            let (result, surface) =
                bundle.localize_full(&radar, &overhead, theta0 as F)?;
            if let Some(path) = dump_surface {
                write_surface(&surface, &path)?;
                println!("surface -> {}", path.display());
            }
            println!(
                "estimate: x = {:.3} m, y = {:.3} m, theta = {:.5} rad ({:.2} deg)",
                result.estimate.x,
                result.estimate.y,
                result.estimate.theta,
                (result.estimate.theta as f64).to_degrees()
            );
            println!(
                "peak score {:.4}, peak ratio {:.3}{}, latency {:.1} ms",
                result.peak_score,
                result.peak_ratio,
                if result.ambiguous { " (AMBIGUOUS)" } else { "" },
                result.latency_ms
            );
        }

        Command::Eval {
            bundle,
            data,
            report,
            plots,
            bench,
        } => {
            let bundle = checkpoint::load_bundle::<F>(&bundle)?;
            let manifest = read_dataset(&data)?;
            let samples: Vec<_> = manifest
                .stream::<F>()
                .collect::<radloc::Result<Vec<_>>>()?;
            let metrics = evaluate(&bundle, &samples)?;
            metrics.write_json(&report)?;
            println!(
                "mean errors: e_x {:.3} m, e_y {:.3} m, e_theta {:.3} deg over {} samples",
                metrics.mean_ex_m,
                metrics.mean_ey_m,
                metrics.mean_etheta_deg,
                metrics.samples.len()
            );
            println!(
                "latency: mean {:.1} ms, p95 {:.1} ms; report {}",
                metrics.latency_mean_ms,
                metrics.latency_p95_ms,
                report.display()
            );
            if let Some(dir) = plots {
                let files = export_histograms(&metrics, 20, &dir)?;
                println!("{} plot files in {}", files.len(), dir.display());
            }
            if bench > 0 {
                let s = &samples[0];
                let stats = bench_latency(
                    &bundle,
                    &s.radar,
                    &s.overhead,
                    s.initial_estimate.theta,
                    bench,
                )?;
                println!(
                    "bench: {} runs, mean {:.1} ms, p95 {:.1} ms",
                    stats.runs, stats.mean_ms, stats.p95_ms
                );
            }
        }
    }
    Ok(())
}

fn log_path(out: &std::path::Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".log.csv");
    PathBuf::from(p)
}
