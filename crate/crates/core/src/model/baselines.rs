//! Single-pose baselines sharing the foundation backbone: a stride-4 keypoint heatmap head and a
//! direct coordinate regressor.

use candle_core::{Module, Tensor, D};
use candle_nn::{Conv2d, Linear};

use super::backbone::Backbone;
use super::layers::{conv, linear};
use super::params::ParamStore;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::pose::{NUM_KEYPOINTS, POSE_DIM};

fn backbone(p: &mut ParamStore, cfg: &ModelConfig) -> Result<Backbone> {
    cfg.validate()?;
    Backbone::new(
        p,
        "backbone",
        cfg.backbone,
        3,
        &cfg.backbone_channels,
        cfg.convs_per_stage,
        cfg.lateral_channels,
    )
}

fn stack(t: &Tensor) -> Result<Tensor> {
    let (n, l, h, w) = t.dims4()?;
    if n % 3 != 0 {
        return Err(Error::Config(format!("crop batch of {n} is not a multiple of 3")));
    }
    Ok(t.reshape((n / 3, 3 * l, h, w))?)
}

/// `M`-channel keypoint heatmaps at a quarter of the crop resolution.
#[derive(Debug, Clone)]
pub struct HeatmapBaseline {
    backbone: Backbone,
    head: Conv2d,
}

impl HeatmapBaseline {
    pub fn new(p: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let backbone = backbone(p, cfg)?;
        let head = conv(p, "heatmap.head", 3 * cfg.lateral_channels, NUM_KEYPOINTS, 1, 1, 0)?;
        Ok(HeatmapBaseline { backbone, head })
    }

    /// `(B, M, S/4, S/4)` from `(3B, 3, S, S)` crops.
    pub fn forward(&self, crops: &Tensor) -> Result<Tensor> {
        let p4 = self
            .backbone
            .forward(crops, true)?
            .p4
            .ok_or_else(|| Error::Config("backbone produced no stride-4 map".into()))?;
        Ok(self.head.forward(&stack(&p4)?)?)
    }
}

/// `2M` crop-frame coordinates regressed from pooled fused features.
#[derive(Debug, Clone)]
pub struct RegressionBaseline {
    backbone: Backbone,
    fuse: Conv2d,
    fc: Linear,
}

impl RegressionBaseline {
    pub fn new(p: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let backbone = backbone(p, cfg)?;
        let fuse = conv(p, "regression.fuse", 3 * cfg.lateral_channels, cfg.channels, 1, 1, 0)?;
        let fc = linear(p, "regression.fc", cfg.channels, POSE_DIM)?;
        Ok(RegressionBaseline { backbone, fuse, fc })
    }

    /// `(B, 2M)` from `(3B, 3, S, S)` crops.
    pub fn forward(&self, crops: &Tensor) -> Result<Tensor> {
        let p8 = self.backbone.forward(crops, false)?.p8;
        let f = self.fuse.forward(&stack(&p8)?)?.relu()?;
        let pooled = f.mean(D::Minus1)?.mean(D::Minus1)?;
        Ok(self.fc.forward(&pooled)?)
    }
}
