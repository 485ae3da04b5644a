//! Distillation teacher: sees the central crop plus heatmaps of the ground-truth template placed
//! at the ground-truth scale, and predicts offsets through a feature vector `v`.

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::{Conv2d, Linear};

use super::heatmap::render_heatmaps;
use super::layers::{conv, linear};
use super::params::ParamStore;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::pose::{Pose, Scale, NUM_KEYPOINTS, POSE_DIM};
use crate::scene::Crop;

#[derive(Debug, Clone)]
pub struct Teacher {
    convs: Vec<Conv2d>,
    fc: Linear,
    head: Linear,
    crop_size: usize,
    sigma: f64,
}

/// Input channels: RGB plus one heatmap per keypoint.
pub const TEACHER_INPUT_CHANNELS: usize = 3 + NUM_KEYPOINTS;

impl Teacher {
    pub fn new(p: &mut ParamStore, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::new();
        let mut cin = TEACHER_INPUT_CHANNELS;
        for (i, &c) in config.teacher_channels.iter().enumerate() {
            convs.push(conv(p, &format!("teacher.conv{i}"), cin, c, 3, 2, 1)?);
            cin = c;
        }
        Ok(Teacher {
            convs,
            fc: linear(p, "teacher.fc", cin, config.embed_dim)?,
            head: linear(p, "teacher.head", config.embed_dim, POSE_DIM)?,
            crop_size: config.crop_size,
            sigma: config.heatmap_sigma,
        })
    }

    /// `(3+M) x S x S` input for one sample: central crop and template heatmaps.
    pub fn input(&self, central: &Crop, template: &Pose, scale: &Scale) -> Result<Vec<f32>> {
        if central.size != self.crop_size {
            return Err(Error::Config(format!(
                "teacher expects {0}x{0} crops, got {1}",
                self.crop_size, central.size
            )));
        }
        let mut data = central.data.clone();
        data.extend(render_heatmaps(template, scale, self.crop_size, self.sigma)?);
        Ok(data)
    }

    pub fn batch_input(&self, inputs: &[Vec<f32>], dtype: DType) -> Result<Tensor> {
        let s = self.crop_size;
        let data: Vec<f32> = inputs.iter().flatten().copied().collect();
        Ok(Tensor::from_vec(data, (inputs.len(), TEACHER_INPUT_CHANNELS, s, s), &Device::Cpu)?.to_dtype(dtype)?)
    }

    /// `(v: (B, d), offsets: (B, 2M))`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut h = x.clone();
        for c in &self.convs {
            h = c.forward(&h)?.relu()?;
        }
        let pooled = h.mean(D::Minus1)?.mean(D::Minus1)?;
        let v = self.fc.forward(&pooled)?;
        let offsets = (self.head.forward(&v.relu()?)?.tanh()? * 0.5)?;
        Ok((v, offsets))
    }
}
