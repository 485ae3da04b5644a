//! Preprocessed samples and batch assembly shared by every training loop.

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::network::crops_to_tensor;
use crate::pose::POSE_DIM;
use crate::scene::{make_crops, make_labels, GroundTruthLabel, PreparedInput, SceneSample};
use crate::templates::TemplateLibrary;

/// A sample with its crops and labels computed once.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub input: PreparedInput,
    pub label: GroundTruthLabel,
    /// Ground-truth pose in the crop frame.
    pub crop_pose: [f64; POSE_DIM],
}

pub fn prepare(samples: &[SceneSample], library: &TemplateLibrary, crop_size: usize) -> Result<Vec<PreparedSample>> {
    samples
        .iter()
        .map(|s| {
            Ok(PreparedSample {
                input: make_crops(s, crop_size)?,
                label: make_labels(s, library)?,
                crop_pose: s.to_crop_frame(&s.gt_pose)?.to_flat(),
            })
        })
        .collect()
}

/// Deterministic split into `(train, held_out)` index lists.
pub fn split_indices(n: usize, held_out_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_5B1D);
    idx.shuffle(&mut rng);
    let mut held = ((n as f64) * held_out_fraction).round() as usize;
    if held_out_fraction > 0.0 && n > 1 {
        held = held.clamp(1, n - 1);
    }
    let mut heldout = idx.split_off(n - held);
    let mut train = idx;
    train.sort_unstable();
    heldout.sort_unstable();
    (train, heldout)
}

/// Batches of `size` over `indices`, shuffled by `(seed, epoch)`.
pub fn epoch_batches(indices: &[usize], size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(epoch as u64 + 1));
    order.shuffle(&mut rng);
    order.chunks(size.max(1)).map(|c| c.to_vec()).collect()
}

pub fn crops_of(samples: &[PreparedSample], batch: &[usize], dtype: DType) -> Result<Tensor> {
    let inputs: Vec<&PreparedInput> = batch.iter().map(|&i| &samples[i].input).collect();
    crops_to_tensor(&inputs, dtype)
}

pub fn rows_tensor(rows: &[Vec<f64>], dtype: DType) -> Result<Tensor> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Argument("ragged rows".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Tensor::from_vec(flat, (rows.len(), width), &Device::Cpu)?.to_dtype(dtype)?)
}

pub fn norm_targets(samples: &[PreparedSample], batch: &[usize], dtype: DType) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = batch
        .iter()
        .map(|&i| samples[i].label.norm_pose.to_flat().to_vec())
        .collect();
    rows_tensor(&rows, dtype)
}

pub fn scale_targets(samples: &[PreparedSample], batch: &[usize], dtype: DType) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = batch
        .iter()
        .map(|&i| vec![samples[i].label.scale.sx, samples[i].label.scale.sy])
        .collect();
    rows_tensor(&rows, dtype)
}
