//! Teacher pretraining on ground-truth template heatmaps, and the cached teacher embeddings used
//! for distillation.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::data::{epoch_batches, rows_tensor, split_indices, PreparedSample};
use super::losses::loss_offset;
use super::optim::{OptimConfig, Sgd};
use crate::error::{Error, Result};
use crate::model::{ParamStore, Teacher};
use crate::templates::TemplateLibrary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub optim: OptimConfig,
    pub epochs: usize,
    pub held_out_fraction: f64,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            optim: OptimConfig {
                backbone_lr_mult: 1.0,
                ..OptimConfig::default()
            },
            epochs: 10,
            held_out_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherOutcome {
    /// Offset loss per step.
    pub losses: Vec<f64>,
    /// Mean validation offset loss before and after training.
    pub initial_val: f64,
    pub final_val: f64,
}

/// Teacher input batch and the ground-truth templates `(B, 2M)`.
fn teacher_batch(
    teacher: &Teacher,
    samples: &[PreparedSample],
    library: &TemplateLibrary,
    batch: &[usize],
    dtype: DType,
) -> Result<(Tensor, Tensor)> {
    let mut inputs = Vec::with_capacity(batch.len());
    let mut templates = Vec::with_capacity(batch.len());
    for &i in batch {
        let s = &samples[i];
        let t = library.template(s.label.class_index);
        inputs.push(teacher.input(&s.input.crops[1], t, &s.label.scale)?);
        templates.push(t.to_flat().to_vec());
    }
    Ok((teacher.batch_input(&inputs, dtype)?, rows_tensor(&templates, dtype)?))
}

fn pose_targets(samples: &[PreparedSample], batch: &[usize], dtype: DType) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = batch.iter().map(|&i| samples[i].crop_pose.to_vec()).collect();
    rows_tensor(&rows, dtype)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Mean offset loss of the teacher over `indices`.
pub fn teacher_loss(
    teacher: &Teacher,
    samples: &[PreparedSample],
    library: &TemplateLibrary,
    indices: &[usize],
    dtype: DType,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in indices.chunks(32) {
        let (x, t) = teacher_batch(teacher, samples, library, chunk, dtype)?;
        let (_, off) = teacher.forward(&x)?;
        total += scalar(&loss_offset(&off, &t, &pose_targets(samples, chunk, dtype)?)?)? * chunk.len() as f64;
    }
    Ok(if indices.is_empty() { 0.0 } else { total / indices.len() as f64 })
}

/// Train the teacher to refine the ground-truth template from the central crop and its heatmaps.
pub fn pretrain_teacher(
    teacher: &Teacher,
    store: &ParamStore,
    samples: &[PreparedSample],
    library: &TemplateLibrary,
    cfg: &TeacherConfig,
) -> Result<TeacherOutcome> {
    if samples.is_empty() {
        return Err(Error::Argument("teacher pretraining needs at least one sample".into()));
    }
    let dtype = store.dtype();
    let (train, val) = split_indices(samples.len(), cfg.held_out_fraction, cfg.seed);
    let val = if val.is_empty() { train.clone() } else { val };
    let initial_val = teacher_loss(teacher, samples, library, &val, dtype)?;
    let mut opt = Sgd::new(store, &cfg.optim)?;
    let mut losses = Vec::new();
    for epoch in 0..cfg.epochs {
        for batch in epoch_batches(&train, cfg.optim.batch_size, cfg.seed, epoch) {
            let (x, t) = teacher_batch(teacher, samples, library, &batch, dtype)?;
            let (_, off) = teacher.forward(&x)?;
            let loss = loss_offset(&off, &t, &pose_targets(samples, &batch, dtype)?)?;
            let value = scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    step: losses.len(),
                    what: "teacher offset loss".into(),
                });
            }
            losses.push(value);
            opt.step(&loss.backward()?)?;
        }
    }
    let final_val = teacher_loss(teacher, samples, library, &val, dtype)?;
    Ok(TeacherOutcome {
        losses,
        initial_val,
        final_val,
    })
}

/// Teacher feature vectors `v` for every sample, computed once with the frozen teacher.
pub fn teacher_embeddings(
    teacher: &Teacher,
    samples: &[PreparedSample],
    library: &TemplateLibrary,
    dtype: DType,
) -> Result<Vec<Vec<f64>>> {
    let all: Vec<usize> = (0..samples.len()).collect();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in all.chunks(32) {
        let (x, _) = teacher_batch(teacher, samples, library, chunk, dtype)?;
        let (v, _) = teacher.forward(&x)?;
        out.extend(v.detach().to_dtype(DType::F64)?.to_vec2::<f64>()?);
    }
    Ok(out)
}
