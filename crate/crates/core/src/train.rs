//! The three training stages and their logs.
//!
//! Stage one pre-trains the rotation selector against rotation-aligned
//! targets; stage two pre-trains the generator against shift-aligned
//! targets, independently of stage one; stage three trains everything
//! end-to-end with the translation loss as the only term, which reaches the
//! selector and generator through the differentiable ensemble combination
//! and the soft-argmax readout.
//!
//! Batches run in parallel per sample; gradients are summed in sample index
//! order, so a fixed seed reproduces a run bit for bit regardless of thread
//! count.

use ndarray::{Array1, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{Stage, TrainConfig};
use crate::correlation::{
    loss_pose, loss_pose_backward, soft_argmax, soft_argmax_backward, xcorr_backward_fft,
    xcorr_fft, CorrelationSurface,
};
use crate::dataset::{split_routes, DatasetManifest, SplitOptions};
use crate::embed::{EmbedHyper, EmbedNet, EmbeddingModel};
use crate::error::{Error, Result};
use crate::generator::{GeneratorHyper, GeneratorModel};
use crate::geometry::ThetaGrid;
use crate::image::{make_ensemble, rotate_about_center, translate, ImagePlane, RotationEnsemble};
use crate::localize::{InferenceSettings, ModelBundle};
use crate::nn::adam::Adam;
use crate::nn::layers::{concat_channels, l1_mean, l1_mean_backward};
use crate::nn::{add_assign, l2_norm, param_count};
use crate::scalar::Real;
use crate::selector::{
    build_selector_input, combine_arrays, combine_backward, RotationSelectorModel, SelectorHyper,
};
use crate::world::DatasetSample;

/// Train/validation views of a dataset.
pub struct TrainData<T: Real> {
    pub train: Vec<DatasetSample<T>>,
    pub val: Vec<DatasetSample<T>>,
}

impl<T: Real> TrainData<T> {
    /// Load a dataset directory and split by route order; the test share
    /// (whatever the fractions leave over) is not loaded.
    pub fn from_manifest(manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<Self> {
        let split = split_routes(
            manifest,
            &SplitOptions {
                fractions: (
                    cfg.train_fraction,
                    cfg.val_fraction,
                    1.0 - cfg.train_fraction - cfg.val_fraction,
                ),
                buffer_m: cfg.buffer_m,
                test_stride: 1,
            },
        )?;
        let load = |ids: &[usize]| -> Result<Vec<DatasetSample<T>>> {
            ids.iter().map(|&i| manifest.load_sample(i)).collect()
        };
        Ok(Self {
            train: load(&split.train)?,
            val: load(&split.val)?,
        })
    }
}

/// One optimizer step's log line.
#[derive(Debug, Clone, Copy)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub grad_h: f64,
    pub grad_g: f64,
    pub grad_ea: f64,
    pub grad_eb: f64,
}

/// Everything a stage reports back: the per-step curve and per-epoch
/// validation numbers.
#[derive(Debug, Clone, Default)]
pub struct StageReport {
    pub steps: Vec<StepLog>,
    pub val_losses: Vec<f64>,
    /// Fraction of validation samples whose selected rotation lies within
    /// one grid step of the truth (stage one only).
    pub rotation_accuracy: Option<f64>,
}

impl StageReport {
    pub fn val_initial(&self) -> f64 {
        self.val_losses.first().copied().unwrap_or(f64::NAN)
    }

    pub fn val_final(&self) -> f64 {
        self.val_losses.last().copied().unwrap_or(f64::NAN)
    }

    /// CSV: `step,loss,grad_h,grad_g,grad_ea,grad_eb`.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut text = String::from("step,loss,grad_h,grad_g,grad_ea,grad_eb\n");
        for s in &self.steps {
            text.push_str(&format!(
                "{},{:.9e},{:.6e},{:.6e},{:.6e},{:.6e}\n",
                s.step, s.loss, s.grad_h, s.grad_g, s.grad_ea, s.grad_eb
            ));
        }
        std::fs::write(path, text)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

fn shift_px<T: Real>(s: &DatasetSample<T>) -> (i64, i64) {
    let m = s.overhead.grid().metres_per_pixel;
    (
        (s.gt_offset.x.to_f64() / m).round() as i64,
        (s.gt_offset.y.to_f64() / m).round() as i64,
    )
}

fn check_loss(step: usize, loss: f64) -> Result<f64> {
    if !loss.is_finite() {
        return Err(Error::Divergence { step, loss });
    }
    Ok(loss)
}

fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch).map(|c| c.to_vec()).collect()
}

/// The per-sample rotation grid, centred on that sample's heading prior.
fn sample_grid<T: Real>(cfg: &TrainConfig, s: &DatasetSample<T>) -> Result<ThetaGrid<T>> {
    ThetaGrid::centred(
        s.initial_estimate.theta,
        cfg.n_theta,
        T::cast(cfg.theta_spacing_rad()),
    )
}

// ---------------------------------------------------------------- stage one

/// Pre-train the rotation selector. Supervision: the radar image rotated by
/// the true heading, compared under mean absolute error.
pub fn pretrain_rotation<T: Real>(
    cfg: &TrainConfig,
    data: &TrainData<T>,
) -> Result<(RotationSelectorModel<T>, StageReport)> {
    if cfg.stage != Stage::PretrainRot {
        return Err(Error::invalid("config stage is not pretrain_rot"));
    }
    if data.train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let sat_channels = data.train[0].overhead.channels();
    let radar_channels = data.train[0].radar.channels();
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = RotationSelectorModel::new(
        SelectorHyper {
            n_theta: cfg.n_theta,
            sat_channels,
            radar_channels,
            width: cfg.selector_width,
            group_channels: cfg.selector_group,
        },
        &mut init_rng,
    )?;
    let mut model = model;
    let mut opt = Adam::new(param_count(&model), T::cast(cfg.learning_rate));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut report = StageReport::default();
    let mut step = 0usize;

    let (v_loss, v_acc) = validate_rotation(cfg, &model, &data.val)?;
    report.val_losses.push(v_loss);
    report.rotation_accuracy = Some(v_acc);

    for _epoch in 0..cfg.epochs {
        for batch in epoch_batches(data.train.len(), cfg.batch_size, &mut shuffle_rng) {
            let upstream = 1.0 / batch.len() as f64;
            let results: Vec<(f64, RotationSelectorModel<T>)> = batch
                .par_iter()
                .map(|&i| rotation_sample_grad(cfg, &model, &data.train[i], upstream))
                .collect::<Result<_>>()?;
            let mut grad = model.zeros_like();
            let mut loss = 0.0;
            for (l, g) in &results {
                loss += l * upstream;
                add_assign(&mut grad, g);
            }
            check_loss(step, loss)?;
            opt.step(&mut model, &grad);
            report.steps.push(StepLog {
                step,
                loss,
                grad_h: l2_norm(&grad).to_f64(),
                grad_g: 0.0,
                grad_ea: 0.0,
                grad_eb: 0.0,
            });
            step += 1;
        }
        let (v_loss, v_acc) = validate_rotation(cfg, &model, &data.val)?;
        report.val_losses.push(v_loss);
        report.rotation_accuracy = Some(v_acc);
    }
    Ok((model, report))
}

fn rotation_sample_grad<T: Real>(
    cfg: &TrainConfig,
    model: &RotationSelectorModel<T>,
    sample: &DatasetSample<T>,
    upstream: f64,
) -> Result<(f64, RotationSelectorModel<T>)> {
    let grid = sample_grid(cfg, sample)?;
    let ensemble = make_ensemble(&sample.radar, &grid)?;
    let target = rotate_about_center(&sample.radar, sample.gt_offset.theta)?;
    let (input, _) = build_selector_input(&ensemble, &sample.overhead);
    let (alpha, cache) = model.forward(&input);
    let out = combine_arrays(&ensemble, alpha.as_slice().unwrap());
    let loss = l1_mean(&out, target.data()).to_f64();

    let d_out = l1_mean_backward(&out, target.data(), T::cast(upstream));
    let d_alpha = Array1::from_vec(combine_backward(&ensemble, &d_out));
    let mut grad = model.zeros_like();
    model.backward(&cache, &d_alpha, &mut grad);
    Ok((loss, grad))
}

fn validate_rotation<T: Real>(
    cfg: &TrainConfig,
    model: &RotationSelectorModel<T>,
    val: &[DatasetSample<T>],
) -> Result<(f64, f64)> {
    if val.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let per: Vec<(f64, bool)> = val
        .par_iter()
        .map(|s| -> Result<(f64, bool)> {
            let grid = sample_grid(cfg, s)?;
            let ensemble = make_ensemble(&s.radar, &grid)?;
            let target = rotate_about_center(&s.radar, s.gt_offset.theta)?;
            let (input, _) = build_selector_input(&ensemble, &s.overhead);
            let (alpha, _) = model.forward(&input);
            let out = combine_arrays(&ensemble, alpha.as_slice().unwrap());
            let loss = l1_mean(&out, target.data()).to_f64();
            let chosen = alpha
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0);
            let truth = grid.nearest_index(s.gt_offset.theta);
            Ok((loss, chosen.abs_diff(truth) <= 1))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let loss = per.iter().map(|p| p.0).sum::<f64>() / n;
    let acc = per.iter().filter(|p| p.1).count() as f64 / n;
    Ok((loss, acc))
}

// ---------------------------------------------------------------- stage two

/// Pre-train the generator on ground-truth rotation-aligned inputs, with the
/// shift-aligned radar image as the target. Independent of stage one.
pub fn pretrain_generator<T: Real>(
    cfg: &TrainConfig,
    data: &TrainData<T>,
) -> Result<(GeneratorModel<T>, StageReport)> {
    if cfg.stage != Stage::PretrainGen {
        return Err(Error::invalid("config stage is not pretrain_gen"));
    }
    if data.train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let sat_channels = data.train[0].overhead.channels();
    let radar_channels = data.train[0].radar.channels();
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut model = GeneratorModel::new(
        GeneratorHyper {
            radar_channels,
            sat_channels,
            width: cfg.generator_width,
        },
        &mut init_rng,
    )?;
    let mut opt = Adam::new(param_count(&model), T::cast(cfg.learning_rate));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5851_F42D_4C95_7F2D);
    let mut report = StageReport::default();
    let mut step = 0usize;

    report.val_losses.push(validate_generator(cfg, &model, &data.val)?);
    for _epoch in 0..cfg.epochs {
        for batch in epoch_batches(data.train.len(), cfg.batch_size, &mut shuffle_rng) {
            let upstream = 1.0 / batch.len() as f64;
            let results: Vec<(f64, GeneratorModel<T>)> = batch
                .par_iter()
                .map(|&i| generator_sample_grad(cfg, &model, &data.train[i], upstream))
                .collect::<Result<_>>()?;
            let mut grad = model.zeros_like();
            let mut loss = 0.0;
            for (l, g) in &results {
                loss += l * upstream;
                add_assign(&mut grad, g);
            }
            check_loss(step, loss)?;
            opt.step(&mut model, &grad);
            report.steps.push(StepLog {
                step,
                loss,
                grad_h: 0.0,
                grad_g: l2_norm(&grad).to_f64(),
                grad_ea: 0.0,
                grad_eb: 0.0,
            });
            step += 1;
        }
        report.val_losses.push(validate_generator(cfg, &model, &data.val)?);
    }
    Ok((model, report))
}

/// Generator training views of one sample: the aligned input, the generator
/// conditioning (possibly blanked by the ablation), and the shifted target.
fn generator_views<T: Real>(
    cfg: &TrainConfig,
    s: &DatasetSample<T>,
) -> Result<(ImagePlane<T>, Array3<T>, ImagePlane<T>)> {
    let aligned = rotate_about_center(&s.radar, s.gt_offset.theta)?;
    let (dx, dy) = shift_px(s);
    let target = translate(&aligned, dx, dy)?;
    let conditioning = if cfg.ablation_satellite_only {
        concat_channels(&[
            ImagePlane::zeros(aligned.channels(), *aligned.grid()).data().view(),
            s.overhead.data().view(),
        ])
    } else {
        concat_channels(&[aligned.data().view(), s.overhead.data().view()])
    };
    Ok((aligned, conditioning, target))
}

fn generator_sample_grad<T: Real>(
    cfg: &TrainConfig,
    model: &GeneratorModel<T>,
    sample: &DatasetSample<T>,
    upstream: f64,
) -> Result<(f64, GeneratorModel<T>)> {
    let (_aligned, input, target) = generator_views(cfg, sample)?;
    let (out, cache) = model.forward(&input);
    let loss = l1_mean(&out, target.data()).to_f64();
    let d_out = l1_mean_backward(&out, target.data(), T::cast(upstream));
    let mut grad = model.zeros_like();
    model.backward(&cache, &d_out, &mut grad);
    Ok((loss, grad))
}

fn validate_generator<T: Real>(
    cfg: &TrainConfig,
    model: &GeneratorModel<T>,
    val: &[DatasetSample<T>],
) -> Result<f64> {
    if val.is_empty() {
        return Ok(f64::NAN);
    }
    let losses: Vec<f64> = val
        .par_iter()
        .map(|s| -> Result<f64> {
            let (_aligned, input, target) = generator_views(cfg, s)?;
            let (out, _) = model.forward(&input);
            Ok(l1_mean(&out, target.data()).to_f64())
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

// -------------------------------------------------------------- stage three

struct E2EGrads<T: Real> {
    h: RotationSelectorModel<T>,
    g: GeneratorModel<T>,
    ea: EmbedNet<T>,
    eb: EmbedNet<T>,
}

/// Train the whole pipeline end-to-end from the two pre-trained stages. The
/// only loss is the translation loss; no image-space terms are added.
pub fn train_end_to_end<T: Real>(
    cfg: &TrainConfig,
    data: &TrainData<T>,
    selector: RotationSelectorModel<T>,
    generator: GeneratorModel<T>,
) -> Result<(ModelBundle<T>, StageReport)> {
    if cfg.stage != Stage::EndToEnd {
        return Err(Error::invalid("config stage is not end_to_end"));
    }
    if data.train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if selector.hyper().n_theta != cfg.n_theta {
        return Err(Error::invalid(
            "selector checkpoint hypothesis count disagrees with the config",
        ));
    }
    let grid = cfg.grid()?;
    let radar_channels = data.train[0].radar.channels();
    if generator.hyper().radar_channels != radar_channels {
        return Err(Error::invalid(
            "generator checkpoint channels disagree with the dataset",
        ));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let embedding = EmbeddingModel::new(
        EmbedHyper {
            in_channels: radar_channels,
            width: cfg.embed_width,
            input_height: grid.height,
            input_width: grid.width,
        },
        &mut init_rng,
    )?;
    let settings = InferenceSettings::from_config(cfg)?;
    let mut bundle = ModelBundle::new(selector, generator, embedding, settings)?;

    let mut opt_h = Adam::new(param_count(&bundle.selector), T::cast(cfg.learning_rate));
    let mut opt_g = Adam::new(param_count(&bundle.generator), T::cast(cfg.learning_rate));
    let mut opt_ea = Adam::new(param_count(&bundle.embedding.ea), T::cast(cfg.learning_rate));
    let mut opt_eb = Adam::new(param_count(&bundle.embedding.eb), T::cast(cfg.learning_rate));

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xD1B5_4A32_D192_ED03);
    let mut report = StageReport::default();
    let mut step = 0usize;

    report.val_losses.push(validate_e2e(cfg, &bundle, &data.val)?);
    for _epoch in 0..cfg.epochs {
        for batch in epoch_batches(data.train.len(), cfg.batch_size, &mut shuffle_rng) {
            let upstream = 1.0 / batch.len() as f64;
            let results: Vec<(f64, E2EGrads<T>)> = batch
                .par_iter()
                .map(|&i| e2e_sample_grad(cfg, &bundle, &data.train[i], upstream))
                .collect::<Result<_>>()?;
            let mut gh = bundle.selector.zeros_like();
            let mut gg = bundle.generator.zeros_like();
            let mut gea = bundle.embedding.ea.zeros_like();
            let mut geb = bundle.embedding.eb.zeros_like();
            let mut loss = 0.0;
            for (l, g) in &results {
                loss += l * upstream;
                add_assign(&mut gh, &g.h);
                add_assign(&mut gg, &g.g);
                add_assign(&mut gea, &g.ea);
                add_assign(&mut geb, &g.eb);
            }
            check_loss(step, loss)?;
            opt_h.step(&mut bundle.selector, &gh);
            opt_g.step(&mut bundle.generator, &gg);
            if !cfg.freeze_embeddings {
                opt_ea.step(&mut bundle.embedding.ea, &gea);
                opt_eb.step(&mut bundle.embedding.eb, &geb);
            }
            report.steps.push(StepLog {
                step,
                loss,
                grad_h: l2_norm(&gh).to_f64(),
                grad_g: l2_norm(&gg).to_f64(),
                grad_ea: l2_norm(&gea).to_f64(),
                grad_eb: l2_norm(&geb).to_f64(),
            });
            step += 1;
        }
        report.val_losses.push(validate_e2e(cfg, &bundle, &data.val)?);
    }
    Ok((bundle, report))
}

/// Shared forward graph of stage three up to the correlation surface.
struct E2EForward<T: Real> {
    ensemble: RotationEnsemble<T>,
    h_cache: crate::selector::SelectorCache<T>,
    aligned: Array3<T>,
    g_cache: crate::generator::GeneratorCache<T>,
    ea_cache: crate::embed::EmbedCache<T>,
    ea_out: Array3<T>,
    eb_cache: crate::embed::EmbedCache<T>,
    eb_out: Array3<T>,
    surface: CorrelationSurface<T>,
    pred: (T, T),
    gt: (T, T),
}

fn e2e_forward<T: Real>(
    cfg: &TrainConfig,
    bundle: &ModelBundle<T>,
    sample: &DatasetSample<T>,
) -> Result<E2EForward<T>> {
    let grid = sample_grid(cfg, sample)?;
    let ensemble = make_ensemble(&sample.radar, &grid)?;
    let (input, _) = build_selector_input(&ensemble, &sample.overhead);
    let (alpha, h_cache) = bundle.selector.forward(&input);
    let aligned = combine_arrays(&ensemble, alpha.as_slice().unwrap());

    let g_radar = if cfg.ablation_satellite_only {
        Array3::zeros(aligned.dim())
    } else {
        aligned.clone()
    };
    let g_input = concat_channels(&[g_radar.view(), sample.overhead.data().view()]);
    let (generated, g_cache) = bundle.generator.forward(&g_input);

    let (ea_out, ea_cache) = bundle.embedding.ea.forward(&generated);
    let (eb_out, eb_cache) = bundle.embedding.eb.forward(&aligned);

    let space = cfg.space()?;
    let scores = xcorr_fft(
        &eb_out.index_axis(ndarray::Axis(0), 0),
        &ea_out.index_axis(ndarray::Axis(0), 0),
        &space,
    );
    let surface = CorrelationSurface::new(scores, space)?;
    let pred = soft_argmax(&surface, T::cast(cfg.temperature))?;
    let (dx, dy) = shift_px(sample);
    let gt = (T::cast(dx as f64), T::cast(dy as f64));
    let _ = (alpha, generated, g_input);
    Ok(E2EForward {
        ensemble,
        h_cache,
        aligned,
        g_cache,
        ea_cache,
        ea_out,
        eb_cache,
        eb_out,
        surface,
        pred,
        gt,
    })
}

fn e2e_sample_grad<T: Real>(
    cfg: &TrainConfig,
    bundle: &ModelBundle<T>,
    sample: &DatasetSample<T>,
    upstream: f64,
) -> Result<(f64, E2EGrads<T>)> {
    let f = e2e_forward(cfg, bundle, sample)?;
    let loss = loss_pose(f.pred, f.gt).to_f64();

    let (dlx, dly) = loss_pose_backward(f.pred, f.gt);
    let up = T::cast(upstream);
    let d_scores = soft_argmax_backward(
        &f.surface,
        T::cast(cfg.temperature),
        (dlx * up, dly * up),
    );
    let (d_eb_out, d_ea_out) = xcorr_backward_fft(
        &f.eb_out.index_axis(ndarray::Axis(0), 0),
        &f.ea_out.index_axis(ndarray::Axis(0), 0),
        f.surface.space(),
        &d_scores.view(),
    );
    let d_ea_out = d_ea_out.insert_axis(ndarray::Axis(0));
    let d_eb_out = d_eb_out.insert_axis(ndarray::Axis(0));

    let mut grads = E2EGrads {
        h: bundle.selector.zeros_like(),
        g: bundle.generator.zeros_like(),
        ea: bundle.embedding.ea.zeros_like(),
        eb: bundle.embedding.eb.zeros_like(),
    };
    let d_generated = bundle
        .embedding
        .ea
        .backward(&f.ea_cache, &d_ea_out, &mut grads.ea);
    let d_aligned_from_eb = bundle
        .embedding
        .eb
        .backward(&f.eb_cache, &d_eb_out, &mut grads.eb);

    let d_g_input = bundle.generator.backward(&f.g_cache, &d_generated, &mut grads.g);
    let radar_c = f.aligned.dim().0;
    let d_aligned_from_g = if cfg.ablation_satellite_only {
        Array3::zeros(f.aligned.dim())
    } else {
        d_g_input.slice(ndarray::s![..radar_c, .., ..]).to_owned()
    };
    let d_aligned = &d_aligned_from_eb + &d_aligned_from_g;

    let d_alpha = Array1::from_vec(combine_backward(&f.ensemble, &d_aligned));
    bundle.selector.backward(&f.h_cache, &d_alpha, &mut grads.h);

    Ok((loss, grads))
}

fn validate_e2e<T: Real>(
    cfg: &TrainConfig,
    bundle: &ModelBundle<T>,
    val: &[DatasetSample<T>],
) -> Result<f64> {
    if val.is_empty() {
        return Ok(f64::NAN);
    }
    let losses: Vec<f64> = val
        .par_iter()
        .map(|s| -> Result<f64> {
            let f = e2e_forward(cfg, bundle, s)?;
            Ok(loss_pose(f.pred, f.gt).to_f64())
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;
    use crate::world::{sample_pair_with, SampleParams, SensorParams, WorldModel};

    pub(crate) fn toy_cfg(stage: Stage, seed: u64) -> TrainConfig {
        TrainConfig {
            stage,
            seed,
            epochs: 1,
            batch_size: 4,
            learning_rate: 2e-4,
            image_size: 64,
            metres_per_pixel: 0.8665,
            n_theta: 5,
            theta_spacing_deg: 2.0,
            search_radius_px: 16,
            temperature: 1.0,
            selector_width: 4,
            selector_group: 2,
            generator_width: 4,
            embed_width: 4,
            ..TrainConfig::default()
        }
    }

    pub(crate) fn toy_data(n_train: usize, n_val: usize, seed: u64) -> TrainData<f32> {
        let world = WorldModel::generate(seed, 700.0);
        let grid = GridSpec::new(64, 64, 0.8665).unwrap();
        let sp = SensorParams {
            max_range: 60.0,
            speckle: 0.08,
            occlusion: true,
            falloff: 0.7,
        };
        let params = SampleParams {
            max_shift_px: 12,
            theta0_half_range: 4f64.to_radians(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(77));
        let mut draw = |n: usize| -> Vec<DatasetSample<f32>> {
            (0..n)
                .map(|_| {
                    sample_pair_with(&world, &mut rng, &grid, &sp, &params, None).unwrap()
                })
                .collect()
        };
        TrainData {
            train: draw(n_train),
            val: draw(n_val),
        }
    }

    #[test]
    fn one_step_smoke_all_stages() {
        let mut cfg = toy_cfg(Stage::PretrainRot, 3);
        let data = toy_data(4, 2, 5);
        let (selector, rep) = pretrain_rotation(&cfg, &data).unwrap();
        assert!(rep.steps.iter().all(|s| s.loss.is_finite()));
        assert!(rep.steps[0].grad_h > 0.0);

        cfg.stage = Stage::PretrainGen;
        let (generator, rep) = pretrain_generator(&cfg, &data).unwrap();
        assert!(rep.steps.iter().all(|s| s.loss.is_finite()));
        assert!(rep.steps[0].grad_g > 0.0);

        cfg.stage = Stage::EndToEnd;
        let (bundle, rep) = train_end_to_end(&cfg, &data, selector, generator).unwrap();
        // the translation loss reaches every subnetwork
        assert!(rep.steps[0].grad_h > 0.0, "no gradient into the selector");
        assert!(rep.steps[0].grad_g > 0.0, "no gradient into the generator");
        assert!(rep.steps[0].grad_ea > 0.0, "no gradient into e_A");
        assert!(rep.steps[0].grad_eb > 0.0, "no gradient into e_B");
        let _ = bundle;
    }

    #[test]
    fn reruns_reproduce_the_loss_curve() {
        let cfg = toy_cfg(Stage::PretrainRot, 11);
        let data = toy_data(6, 2, 13);
        let (_, a) = pretrain_rotation(&cfg, &data).unwrap();
        let (_, b) = pretrain_rotation(&cfg, &data).unwrap();
        assert_eq!(a.steps.len(), b.steps.len());
        for (x, y) in a.steps.iter().zip(&b.steps) {
            assert!((x.loss - y.loss).abs() <= 1e-6, "{} vs {}", x.loss, y.loss);
        }
    }

    #[test]
    fn generator_pretraining_ignores_stage_one() {
        // running stage one first must not change what stage two produces
        let data = toy_data(4, 1, 21);
        let cfg_rot = toy_cfg(Stage::PretrainRot, 31);
        let cfg_gen = toy_cfg(Stage::PretrainGen, 31);
        let (_, _) = pretrain_rotation(&cfg_rot, &data).unwrap();
        let (g1, _) = pretrain_generator(&cfg_gen, &data).unwrap();
        let (g2, _) = pretrain_generator(&cfg_gen, &data).unwrap();
        assert_eq!(crate::nn::to_flat(&g1), crate::nn::to_flat(&g2));
    }

    #[test]
    fn stage_mismatch_is_rejected() {
        let cfg = toy_cfg(Stage::PretrainGen, 1);
        let data = toy_data(2, 1, 2);
        assert!(pretrain_rotation(&cfg, &data).is_err());
    }

    #[test]
    fn csv_log_has_the_documented_columns() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_cfg(Stage::PretrainRot, 41);
        let data = toy_data(2, 1, 42);
        let (_, rep) = pretrain_rotation(&cfg, &data).unwrap();
        let path = dir.path().join("log.csv");
        rep.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,loss,grad_h,grad_g,grad_ea,grad_eb\n"));
        assert_eq!(text.lines().count(), 1 + rep.steps.len());
    }
}
