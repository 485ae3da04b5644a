//! Learnable components: foundation network, scale and offset decoders, distillation teacher,
//! discriminator and the two single-pose baselines.

pub mod attention;
pub mod backbone;
pub mod baselines;
pub mod heatmap;
pub mod layers;
pub mod network;
pub mod params;
pub mod roi;
pub mod teacher;

use serde::{Deserialize, Serialize};

pub use backbone::BackboneKind;
pub use baselines::{HeatmapBaseline, RegressionBaseline};
pub use network::{Discriminator, ForwardOptions, ModelOutput, PoseModel};
pub use params::ParamStore;
pub use teacher::Teacher;

use crate::error::{Error, Result};
use crate::pose::POSE_DIM;

/// Architecture hyperparameters shared by the model, teacher and baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of templates `K`; taken from the library at build time.
    pub num_templates: usize,
    /// Side of each prepared crop.
    pub crop_size: usize,
    /// Side of the fused feature map; must equal `crop_size / 8`.
    pub feature_size: usize,
    /// Fused feature channels `C`.
    pub channels: usize,
    /// Query embedding width `d`.
    pub embed_dim: usize,
    pub heads: usize,
    pub scale_layers: usize,
    pub offset_layers: usize,
    /// Hidden width of the scale/offset heads and the discriminator.
    pub mlp_hidden: usize,
    /// Hidden width of the decoder feed-forward blocks.
    pub ffn_dim: usize,
    pub backbone: BackboneKind,
    pub backbone_channels: Vec<usize>,
    pub convs_per_stage: usize,
    pub lateral_channels: usize,
    /// Sample points per ROI bin along each axis.
    pub roi_sampling: usize,
    /// Keypoint heatmap width in crop pixels.
    pub heatmap_sigma: f64,
    pub teacher_channels: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_templates: 14,
            crop_size: 224,
            feature_size: 28,
            channels: 128,
            embed_dim: 128,
            heads: 4,
            scale_layers: 3,
            offset_layers: 1,
            mlp_hidden: 256,
            ffn_dim: 256,
            backbone: BackboneKind::SmallCnn,
            backbone_channels: vec![16, 32, 64, 128],
            convs_per_stage: 1,
            lateral_channels: 64,
            roi_sampling: 2,
            heatmap_sigma: 2.0,
            teacher_channels: vec![16, 32, 64, 128],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_templates == 0 {
            return fail("model needs at least one template".into());
        }
        if self.crop_size % 8 != 0 || self.feature_size * 8 != self.crop_size {
            return fail(format!(
                "feature size {} must be crop size {} / 8",
                self.feature_size, self.crop_size
            ));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return fail(format!("embed dim {} not divisible by {} heads", self.embed_dim, self.heads));
        }
        if self.embed_dim % 4 != 0 {
            return fail(format!("embed dim {} must be a multiple of 4", self.embed_dim));
        }
        if self.scale_layers == 0 || self.offset_layers == 0 {
            return fail("decoders need at least one layer".into());
        }
        if self.roi_sampling == 0 || self.heatmap_sigma <= 0.0 {
            return fail("roi sampling and heatmap sigma must be positive".into());
        }
        if self.teacher_channels.is_empty() {
            return fail("teacher needs at least one stage".into());
        }
        Ok(())
    }

    /// Discriminator input width: normalized pose, scale and pooled features.
    pub fn disc_input(&self) -> usize {
        POSE_DIM + 2 + self.channels
    }
}
