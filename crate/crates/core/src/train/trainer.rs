//! Alternating generator/discriminator optimization with stage control and positive mining.

use std::io::Write;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::data::{crops_of, epoch_batches, norm_targets, rows_tensor, scale_targets, split_indices, PreparedSample};
use super::labels::{self_training_update, LabelState};
use super::losses::{loss_adv, loss_cls, loss_dis, loss_offset_normalized, loss_scale, total_loss, LossParts};
use super::optim::Sgd;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::network::{Discriminator, ForwardOptions, ModelOutput, PoseModel};
use crate::model::ParamStore;
use crate::pose::POSE_DIM;

/// One logged optimization step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub stage: usize,
    pub epoch: usize,
    pub cls: f64,
    pub offset: f64,
    pub scale: f64,
    pub adv: f64,
    pub dis: f64,
    pub total: f64,
    /// Discriminator objective `-V` of the following discriminator step, if one ran.
    pub disc: Option<f64>,
    /// Held-out accuracy, filled on the last step of each epoch.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricRow>,
    pub labels: LabelState,
    /// Labels promoted at the end of each completed stage.
    pub mined: Vec<usize>,
    pub epochs_run: usize,
    pub final_accuracy: f64,
    pub train_indices: Vec<usize>,
    pub held_out_indices: Vec<usize>,
}

/// Everything the generator objective needs for one batch.
pub struct Batch<'a> {
    pub samples: &'a [PreparedSample],
    pub indices: &'a [usize],
    pub labels: &'a LabelState,
    /// Per-template class weights for the current stage.
    pub class_weights: &'a [f64],
    /// Teacher vectors indexed like `samples`.
    pub teacher_v: Option<&'a [Vec<f64>]>,
}

/// Generator losses for a batch, the weighted total, and the forward output.
pub fn generator_objective(
    model: &PoseModel,
    disc: Option<&Discriminator>,
    batch: &Batch<'_>,
    cfg: &TrainConfig,
    opts: &ForwardOptions,
    dtype: DType,
) -> Result<(LossParts<Tensor>, Tensor, ModelOutput)> {
    let idx = batch.indices;
    let k = model.config().num_templates;
    let crops = crops_of(batch.samples, idx, dtype)?;
    let out = model.forward(&crops, opts)?;

    let labels: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| batch.labels.labels()[i].iter().map(|&l| f64::from(u8::from(l))).collect())
        .collect();
    let weights = rows_tensor(&[batch.class_weights.to_vec()], dtype)?.squeeze(0)?;
    let cls = loss_cls(&out.scores, &rows_tensor(&labels, dtype)?, &weights)?;

    let (offset, scale, dis) = refinement_terms(&out.norm_poses, &out.scales, &out.u_prime, batch, cfg, dtype)?;
    let gt = gt_rows(batch, k)?;
    let zero = Tensor::zeros((), dtype, &Device::Cpu)?;
    let others = others_mask(batch.labels, idx);
    let adv = match disc {
        Some(d) if cfg.weights.adv > 0.0 && others.iter().flatten().any(|&o| o > 0.0) => {
            let d_all = d.forward(&out.disc_inputs()?)?;
            let d_gt = d_all.flatten_all()?.index_select(&gt, 0)?;
            loss_adv(&d_gt, &d_all, &rows_tensor(&others, dtype)?)?.generator
        }
        _ => zero,
    };
    let parts = LossParts {
        cls,
        offset,
        scale,
        adv,
        dis,
    };
    let total = total_loss(&parts, &cfg.weights)?;
    Ok((parts, total, out))
}

/// Flat `b * K + i*` row index of every sample's ground-truth template.
fn gt_rows(batch: &Batch<'_>, k: usize) -> Result<Tensor> {
    let gt: Vec<u32> = batch
        .indices
        .iter()
        .enumerate()
        .map(|(r, &i)| (r * k + batch.labels.gt()[i]) as u32)
        .collect();
    Ok(Tensor::new(gt, &Device::Cpu)?)
}

/// Offset, scale and distillation losses, read only at each sample's ground-truth template.
///
/// `norm_poses: (B, K, M, 2)`, `scales: (B, K, 2)`, `u_prime: (B, K, d)`.
pub fn refinement_terms(
    norm_poses: &Tensor,
    scales: &Tensor,
    u_prime: &Tensor,
    batch: &Batch<'_>,
    cfg: &TrainConfig,
    dtype: DType,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, k, d) = u_prime.dims3()?;
    let idx = batch.indices;
    let gt = gt_rows(batch, k)?;
    let pick = |t: &Tensor, width: usize| -> Result<Tensor> { Ok(t.reshape((b * k, width))?.index_select(&gt, 0)?) };
    let offset = loss_offset_normalized(&pick(norm_poses, POSE_DIM)?, &norm_targets(batch.samples, idx, dtype)?)?;
    let scale = loss_scale(&pick(scales, 2)?, &scale_targets(batch.samples, idx, dtype)?)?;
    let dis = match batch.teacher_v {
        Some(v) if cfg.weights.dis > 0.0 => {
            let rows: Vec<Vec<f64>> = idx.iter().map(|&i| v[i].clone()).collect();
            loss_dis(&pick(u_prime, d)?, &rows_tensor(&rows, dtype)?)?
        }
        _ => Tensor::zeros((), dtype, &Device::Cpu)?,
    };
    Ok((offset, scale, dis))
}

fn others_mask(labels: &LabelState, idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter()
        .map(|&i| {
            let g = labels.gt()[i];
            labels.labels()[i]
                .iter()
                .enumerate()
                .map(|(j, &l)| if l && j != g { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Foundation compatibility scores for `indices`, `eval_batch` samples at a time.
/// Mean offset loss at the ground-truth template over `indices`, without gradients.
pub fn offset_loss(
    model: &PoseModel,
    samples: &[PreparedSample],
    indices: &[usize],
    eval_batch: usize,
    dtype: DType,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Argument("offset loss over no samples".into()));
    }
    let k = model.config().num_templates;
    let labels = LabelState::new(samples.iter().map(|s| s.label.class_index).collect(), k)?;
    let cfg = TrainConfig::default();
    let mut sum = 0.0;
    for chunk in indices.chunks(eval_batch.max(1)) {
        let out = model.forward(&crops_of(samples, chunk, dtype)?, &ForwardOptions::default())?;
        let batch = Batch {
            samples,
            indices: chunk,
            labels: &labels,
            class_weights: &[],
            teacher_v: None,
        };
        let (offset, _, _) = refinement_terms(&out.norm_poses, &out.scales, &out.u_prime, &batch, &cfg, dtype)?;
        sum += offset.to_dtype(DType::F64)?.to_scalar::<f64>()? * chunk.len() as f64;
    }
    Ok(sum / indices.len() as f64)
}

pub fn foundation_scores(
    model: &PoseModel,
    samples: &[PreparedSample],
    indices: &[usize],
    eval_batch: usize,
    dtype: DType,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(eval_batch.max(1)) {
        let crops = crops_of(samples, chunk, dtype)?;
        let scores = model.foundation.forward(&crops)?.scores;
        out.extend(scores.to_dtype(DType::F64)?.to_vec2::<f64>()?);
    }
    Ok(out)
}

/// Index of the highest score; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Fraction of `indices` whose top-scored template is the ground-truth one.
pub fn classification_accuracy(
    model: &PoseModel,
    samples: &[PreparedSample],
    indices: &[usize],
    eval_batch: usize,
    dtype: DType,
) -> Result<f64> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let scores = foundation_scores(model, samples, indices, eval_batch, dtype)?;
    let hits = indices
        .iter()
        .zip(&scores)
        .filter(|(&i, s)| argmax(s) == samples[i].label.class_index)
        .count();
    Ok(hits as f64 / indices.len() as f64)
}

/// Networks and parameter stores trained together.
pub struct Trainable<'a> {
    pub model: &'a PoseModel,
    pub store: &'a ParamStore,
    pub disc: &'a Discriminator,
    pub disc_store: &'a ParamStore,
}

/// Run the multi-stage training loop. Metrics rows are also written as CSV to `log` if given.
pub fn train(
    nets: &Trainable<'_>,
    samples: &[PreparedSample],
    teacher_v: Option<&[Vec<f64>]>,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Argument("training needs at least one sample".into()));
    }
    if let Some(v) = teacher_v {
        if v.len() != samples.len() {
            return Err(Error::Argument(format!("{} teacher vectors for {} samples", v.len(), samples.len())));
        }
    }
    let dtype = nets.store.dtype();
    let k = nets.model.config().num_templates;
    let (train_idx, held_idx) = split_indices(samples.len(), cfg.held_out_fraction, cfg.seed);
    let monitor = if held_idx.is_empty() { &train_idx } else { &held_idx };
    let mut labels = LabelState::new(samples.iter().map(|s| s.label.class_index).collect(), k)?;

    let mut gen_opt = Sgd::new(nets.store, &cfg.optim)?;
    let mut disc_opt = Sgd::new(nets.disc_store, &cfg.optim)?;
    let steps_per_epoch = train_idx.len().div_ceil(cfg.optim.batch_size);
    let total_steps = (cfg.epochs * steps_per_epoch).max(1);

    let mut writer = log.as_mut().map(|w| csv::Writer::from_writer(&mut **w));
    let mut metrics = Vec::new();
    let mut mined = Vec::new();
    let mut step = 0;
    let mut epoch = 0;
    let mut accuracy = 0.0;
    let mut stage_best = f64::NEG_INFINITY;
    let mut stage_epochs = 0;
    let mut declines = 0;
    let mut mining = cfg.self_training;

    while epoch < cfg.epochs {
        let weights = labels.class_weights();
        let batches = epoch_batches(&train_idx, cfg.optim.batch_size, cfg.seed, epoch);
        let n_batches = batches.len();
        for (bi, idx) in batches.into_iter().enumerate() {
            let frac = step as f64 / total_steps as f64;
            gen_opt.set_lr(cfg.optim.lr * (1.0 - (1.0 - cfg.lr_final_fraction) * frac));
            disc_opt.set_lr(cfg.optim.lr * (1.0 - (1.0 - cfg.lr_final_fraction) * frac));
            let batch = Batch {
                samples,
                indices: &idx,
                labels: &labels,
                class_weights: &weights,
                teacher_v,
            };
            let (parts, total, out) =
                generator_objective(nets.model, Some(nets.disc), &batch, cfg, &ForwardOptions::default(), dtype)?;
            let total_v = scalar(&total)?;
            if !total_v.is_finite() {
                return Err(Error::Diverged {
                    step,
                    what: "total loss".into(),
                });
            }
            gen_opt.step(&total.backward()?)?;

            let others = others_mask(&labels, &idx);
            let disc_v = if cfg.weights.adv > 0.0 && others.iter().flatten().any(|&o| o > 0.0) {
                let q = out.disc_inputs()?.detach();
                let d_all = nets.disc.forward(&q)?;
                let d_gt = d_all.flatten_all()?.index_select(&gt_rows(&batch, k)?, 0)?;
                let value = loss_adv(&d_gt, &d_all, &rows_tensor(&others, dtype)?)?.value;
                let loss = value.neg()?;
                let v = scalar(&loss)?;
                if !v.is_finite() {
                    return Err(Error::Diverged {
                        step,
                        what: "discriminator objective".into(),
                    });
                }
                disc_opt.step(&loss.backward()?)?;
                Some(v)
            } else {
                None
            };

            let mut row = MetricRow {
                step,
                stage: labels.stage(),
                epoch,
                cls: scalar(&parts.cls)?,
                offset: scalar(&parts.offset)?,
                scale: scalar(&parts.scale)?,
                adv: scalar(&parts.adv)?,
                dis: scalar(&parts.dis)?,
                total: total_v,
                disc: disc_v,
                accuracy: None,
            };
            if bi + 1 == n_batches {
                accuracy = classification_accuracy(nets.model, samples, monitor, cfg.eval_batch, dtype)?;
                row.accuracy = Some(accuracy);
                log::info!("epoch {epoch} stage {} held-out accuracy {accuracy:.4}", labels.stage());
            }
            if let Some(w) = writer.as_mut() {
                w.serialize(&row)?;
            }
            metrics.push(row);
            step += 1;
        }
        epoch += 1;
        stage_epochs += 1;

        // a plateau counts like a decline, so a saturated held-out accuracy still ends the stage
        if accuracy > stage_best {
            stage_best = accuracy;
            declines = 0;
        } else {
            declines += 1;
        }
        let stage_over = declines >= cfg.patience || (cfg.stage_epochs > 0 && stage_epochs >= cfg.stage_epochs);
        if stage_over && mining {
            let all: Vec<usize> = (0..samples.len()).collect();
            let scores = foundation_scores(nets.model, samples, &all, cfg.eval_batch, dtype)?;
            let (next, changed) = self_training_update(&labels, &scores, cfg.mining_threshold)?;
            log::info!("stage {} ended after epoch {epoch}: {changed} labels mined", labels.stage());
            labels = next;
            mined.push(changed);
            // once the labels settle, the last stage uses the remaining epoch budget
            mining = changed > 0 && labels.stage() < cfg.max_stages;
            stage_best = f64::NEG_INFINITY;
            stage_epochs = 0;
            declines = 0;
        }
    }
    if let Some(w) = writer.as_mut() {
        w.flush().map_err(|e| Error::io("metrics log", e))?;
    }
    Ok(TrainOutcome {
        metrics,
        labels,
        mined,
        epochs_run: epoch,
        final_accuracy: accuracy,
        train_indices: train_idx,
        held_out_indices: held_idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::network::tests::tiny_config;
    use crate::train::fixtures::world;
    use crate::train::LabelState;

    struct Nets {
        model: PoseModel,
        store: ParamStore,
        disc: Discriminator,
        disc_store: ParamStore,
    }

    fn nets(lib: &crate::templates::TemplateLibrary, dtype: DType, seed: u64) -> Nets {
        let cfg = tiny_config(lib.len());
        let mut store = ParamStore::new(dtype, seed);
        let model = PoseModel::new(&mut store, &cfg, lib.templates()).unwrap();
        let mut disc_store = ParamStore::new(dtype, seed + 1);
        let disc = Discriminator::new(&mut disc_store, &cfg).unwrap();
        Nets {
            model,
            store,
            disc,
            disc_store,
        }
    }

    fn quick_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            optim: crate::train::OptimConfig {
                lr: 1e-2,
                momentum: 0.9,
                batch_size: 4,
                ..Default::default()
            },
            eval_batch: 8,
            ..Default::default()
        }
    }

    fn run(n: &Nets, samples: &[PreparedSample], cfg: &TrainConfig) -> TrainOutcome {
        let t = Trainable {
            model: &n.model,
            store: &n.store,
            disc: &n.disc,
            disc_store: &n.disc_store,
        };
        train(&t, samples, None, cfg, None).unwrap()
    }

    #[test]
    fn fixed_seed_gives_identical_trajectories() {
        let (samples, lib) = world(12, 32, 0.0);
        let cfg = quick_cfg(2);
        let a = run(&nets(&lib, DType::F32, 3), &samples, &cfg);
        let b = run(&nets(&lib, DType::F32, 3), &samples, &cfg);
        assert!(!a.metrics.is_empty());
        let totals = |o: &TrainOutcome| o.metrics.iter().map(|m| m.total.to_bits()).collect::<Vec<_>>();
        assert_eq!(totals(&a), totals(&b));
    }

    #[test]
    fn metrics_log_is_csv_with_one_row_per_step() {
        let (samples, lib) = world(8, 32, 0.0);
        let n = nets(&lib, DType::F32, 0);
        let t = Trainable {
            model: &n.model,
            store: &n.store,
            disc: &n.disc,
            disc_store: &n.disc_store,
        };
        let mut buf = Vec::new();
        let out = train(&t, &samples, None, &quick_cfg(1), Some(&mut buf)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,stage,epoch,cls,offset,scale,adv,dis,total,disc,accuracy");
        assert_eq!(lines.len(), out.metrics.len() + 1);
    }

    #[test]
    fn refinement_losses_touch_only_ground_truth_rows() {
        let (samples, lib) = world(3, 32, 0.0);
        let n = nets(&lib, DType::F64, 1);
        let labels = LabelState::new(samples.iter().map(|s| s.label.class_index).collect(), 4).unwrap();
        let v: Vec<Vec<f64>> = (0..3).map(|i| vec![0.1 * i as f64; 8]).collect();
        let weights = vec![1.0; 4];
        let batch = Batch {
            samples: &samples,
            indices: &[0, 1, 2],
            labels: &labels,
            class_weights: &weights,
            teacher_v: Some(&v),
        };
        let cfg = TrainConfig::default();
        let (_, _, out) = generator_objective(&n.model, None, &batch, &cfg, &Default::default(), DType::F64).unwrap();
        let leaf = |t: &Tensor| candle_core::Var::from_tensor(&t.detach()).unwrap();
        let (np, sc, up) = (leaf(&out.norm_poses), leaf(&out.scales), leaf(&out.u_prime));
        let (o, s, d) = refinement_terms(&np, &sc, &up, &batch, &cfg, DType::F64).unwrap();
        let grads = ((o + s).unwrap() + d).unwrap().backward().unwrap();
        for (t, width) in [(np.as_tensor(), POSE_DIM), (sc.as_tensor(), 2), (up.as_tensor(), 8)] {
            let g = grads.get(t).unwrap().reshape((3, 4, width)).unwrap().to_vec3::<f64>().unwrap();
            for (b, rows) in g.iter().enumerate() {
                for (i, row) in rows.iter().enumerate() {
                    let zero = row.iter().all(|&x| x == 0.0);
                    assert_eq!(zero, i != labels.gt()[b], "sample {b} template {i}");
                }
            }
        }
    }

    #[test]
    fn generator_and_discriminator_steps_are_isolated() {
        let (samples, lib) = world(8, 32, 0.0);
        let n = nets(&lib, DType::F32, 2);
        // one extra positive per sample so the adversarial branch is active
        let gt: Vec<usize> = samples.iter().map(|s| s.label.class_index).collect();
        let base = LabelState::new(gt.clone(), 4).unwrap();
        let scores: Vec<Vec<f64>> = gt.iter().map(|&g| (0..4).map(|i| if i == (g + 1) % 4 { 0.9 } else { 0.0 }).collect()).collect();
        let (labels, _) = self_training_update(&base, &scores, 0.7).unwrap();
        let weights = labels.class_weights();
        let idx: Vec<usize> = (0..8).collect();
        let batch = Batch {
            samples: &samples,
            indices: &idx,
            labels: &labels,
            class_weights: &weights,
            teacher_v: None,
        };
        let cfg = TrainConfig::default();
        let snapshot = |s: &ParamStore| {
            s.tensors()
                .into_iter()
                .map(|(k, t)| (k, t.flatten_all().unwrap().to_vec1::<f32>().unwrap()))
                .collect::<Vec<_>>()
        };
        let (parts, total, out) =
            generator_objective(&n.model, Some(&n.disc), &batch, &cfg, &Default::default(), DType::F32).unwrap();
        assert!(parts.adv.to_scalar::<f32>().unwrap() > 0.0);
        let d_before = snapshot(&n.disc_store);
        let g_before = snapshot(&n.store);
        Sgd::new(&n.store, &cfg.optim).unwrap().step(&total.backward().unwrap()).unwrap();
        assert_eq!(snapshot(&n.disc_store), d_before);
        assert_ne!(snapshot(&n.store), g_before);

        let g_mid = snapshot(&n.store);
        let q = out.disc_inputs().unwrap().detach();
        let d_all = n.disc.forward(&q).unwrap();
        let loss = d_all.mean_all().unwrap();
        Sgd::new(&n.disc_store, &cfg.optim).unwrap().step(&loss.backward().unwrap()).unwrap();
        assert_eq!(snapshot(&n.store), g_mid);
        assert_ne!(snapshot(&n.disc_store), d_before);
    }

    #[test]
    fn single_sample_overfits_offsets() {
        let (samples, lib) = world(1, 32, 0.0);
        let n = nets(&lib, DType::F32, 5);
        let cfg = TrainConfig {
            epochs: 500,
            held_out_fraction: 0.0,
            self_training: false,
            optim: crate::train::OptimConfig {
                lr: 1e-2,
                momentum: 0.9,
                batch_size: 1,
                weight_decay: 0.0,
                backbone_lr_mult: 1.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = run(&n, &samples, &cfg);
        let last = out.metrics.last().unwrap();
        assert!(last.offset < 1e-3, "offset loss {}", last.offset);
    }
}
