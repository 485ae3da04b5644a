//! Training and inference for the single-pose heatmap and regression baselines.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::data::{crops_of, epoch_batches, rows_tensor, PreparedSample};
use super::optim::{OptimConfig, Sgd};
use crate::error::{Error, Result};
use crate::model::baselines::{HeatmapBaseline, RegressionBaseline};
use crate::model::heatmap::{decode_argmax, keypoint_heatmaps};
use crate::model::ParamStore;
use crate::pose::{Pose, NUM_KEYPOINTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub optim: OptimConfig,
    pub epochs: usize,
    /// Gaussian width of heatmap targets in output pixels.
    pub heatmap_sigma: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            optim: OptimConfig::default(),
            epochs: 20,
            heatmap_sigma: 1.0,
            seed: 0,
        }
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn pose_rows(samples: &[PreparedSample], batch: &[usize], dtype: DType) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = batch.iter().map(|&i| samples[i].crop_pose.to_vec()).collect();
    rows_tensor(&rows, dtype)
}

fn heatmap_targets(samples: &[PreparedSample], batch: &[usize], size: usize, sigma: f64, dtype: DType) -> Result<Tensor> {
    let mut data = Vec::with_capacity(batch.len() * NUM_KEYPOINTS * size * size);
    for &i in batch {
        data.extend(keypoint_heatmaps(&Pose::from_flat(&samples[i].crop_pose)?, size, sigma));
    }
    Ok(Tensor::from_vec(data, (batch.len(), NUM_KEYPOINTS, size, size), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

/// Shared SGD loop; `loss` maps a batch to a scalar tensor.
fn fit(
    store: &ParamStore,
    indices: &[usize],
    cfg: &BaselineConfig,
    mut loss: impl FnMut(&[usize]) -> Result<Tensor>,
) -> Result<Vec<f64>> {
    if indices.is_empty() {
        return Err(Error::Argument("baseline training needs at least one sample".into()));
    }
    let mut opt = Sgd::new(store, &cfg.optim)?;
    let mut losses = Vec::new();
    for epoch in 0..cfg.epochs {
        for batch in epoch_batches(indices, cfg.optim.batch_size, cfg.seed, epoch) {
            let l = loss(&batch)?;
            let v = scalar(&l)?;
            if !v.is_finite() {
                return Err(Error::Diverged {
                    step: losses.len(),
                    what: "baseline loss".into(),
                });
            }
            losses.push(v);
            opt.step(&l.backward()?)?;
        }
    }
    Ok(losses)
}

/// Mean squared error on crop-frame coordinates.
pub fn train_regression(
    model: &RegressionBaseline,
    store: &ParamStore,
    samples: &[PreparedSample],
    indices: &[usize],
    cfg: &BaselineConfig,
) -> Result<Vec<f64>> {
    let dtype = store.dtype();
    fit(store, indices, cfg, |batch| {
        let pred = model.forward(&crops_of(samples, batch, dtype)?)?;
        Ok((pred - pose_rows(samples, batch, dtype)?)?.sqr()?.mean_all()?)
    })
}

/// Mean squared error against Gaussian keypoint maps at a quarter of the crop resolution.
pub fn train_heatmap(
    model: &HeatmapBaseline,
    store: &ParamStore,
    samples: &[PreparedSample],
    indices: &[usize],
    cfg: &BaselineConfig,
) -> Result<Vec<f64>> {
    let dtype = store.dtype();
    fit(store, indices, cfg, |batch| {
        let pred = model.forward(&crops_of(samples, batch, dtype)?)?;
        let size = pred.dims()[2];
        let target = heatmap_targets(samples, batch, size, cfg.heatmap_sigma, dtype)?;
        Ok((pred - target)?.sqr()?.mean_all()?)
    })
}

/// Crop-frame poses predicted by the regression baseline.
pub fn predict_regression(model: &RegressionBaseline, samples: &[PreparedSample], indices: &[usize], dtype: DType) -> Result<Vec<Pose>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(32) {
        let pred = model.forward(&crops_of(samples, chunk, dtype)?)?;
        for row in pred.to_dtype(DType::F64)?.to_vec2::<f64>()? {
            out.push(Pose::from_flat(&row)?);
        }
    }
    Ok(out)
}

/// Crop-frame poses decoded from the heatmap baseline by per-channel argmax.
pub fn predict_heatmap(model: &HeatmapBaseline, samples: &[PreparedSample], indices: &[usize], dtype: DType) -> Result<Vec<Pose>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(32) {
        let pred = model.forward(&crops_of(samples, chunk, dtype)?)?;
        let size = pred.dims()[2];
        for i in 0..chunk.len() {
            let maps: Vec<f32> = pred.get(i)?.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
            out.push(decode_argmax(&maps, size)?);
        }
    }
    Ok(out)
}
