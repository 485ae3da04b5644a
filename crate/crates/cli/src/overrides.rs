//! Command-line flags that override individual configuration keys.

use clap::Args;
use tempose::model::{BackboneKind, ModelConfig};
use tempose::synth::WorldConfig;
use tempose::train::{OptimConfig, TrainConfig};

fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
    if let Some(v) = value {
        *slot = v.clone();
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct WorldFlags {
    /// Gaussian keypoint jitter in normalized pose units.
    #[arg(long)]
    pub keypoint_jitter: Option<f64>,
    /// Fraction of scenes whose zone admits two families.
    #[arg(long)]
    pub ambiguity_rate: Option<f64>,
    /// Seed of the generated world.
    #[arg(long)]
    pub world_seed: Option<u64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
}

impl WorldFlags {
    pub fn apply(&self, w: &mut WorldConfig) {
        set(&mut w.keypoint_jitter, &self.keypoint_jitter);
        set(&mut w.ambiguity_rate, &self.ambiguity_rate);
        set(&mut w.seed, &self.world_seed);
        set(&mut w.width, &self.width);
        set(&mut w.height, &self.height);
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct OptimFlags {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Learning-rate multiplier of backbone parameters.
    #[arg(long)]
    pub backbone_lr_mult: Option<f64>,
    /// Global gradient-norm clip; 0 disables.
    #[arg(long)]
    pub grad_clip: Option<f64>,
}

impl OptimFlags {
    pub fn apply(&self, o: &mut OptimConfig) {
        set(&mut o.lr, &self.lr);
        set(&mut o.momentum, &self.momentum);
        set(&mut o.weight_decay, &self.weight_decay);
        set(&mut o.batch_size, &self.batch_size);
        set(&mut o.backbone_lr_mult, &self.backbone_lr_mult);
        set(&mut o.grad_clip, &self.grad_clip);
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelFlags {
    /// Crop side; the feature map side follows as crop / 8.
    #[arg(long)]
    pub crop_size: Option<usize>,
    #[arg(long, value_parser = parse_backbone)]
    pub backbone: Option<BackboneKind>,
}

fn parse_backbone(s: &str) -> Result<BackboneKind, String> {
    match s {
        "small-cnn" => Ok(BackboneKind::SmallCnn),
        "resnet18" => Ok(BackboneKind::Resnet18),
        _ => Err(format!("unknown backbone {s:?}, expected small-cnn or resnet18")),
    }
}

impl ModelFlags {
    pub fn apply(&self, m: &mut ModelConfig) {
        if let Some(c) = self.crop_size {
            m.crop_size = c;
            m.feature_size = c / 8;
        }
        set(&mut m.backbone, &self.backbone);
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lambda_offset: Option<f64>,
    #[arg(long)]
    pub lambda_scale: Option<f64>,
    #[arg(long)]
    pub lambda_adv: Option<f64>,
    #[arg(long)]
    pub lambda_dis: Option<f64>,
    /// Maximum number of self-training stages.
    #[arg(long)]
    pub max_stages: Option<usize>,
    /// Foundation-score threshold for mining extra positives.
    #[arg(long)]
    pub mining_threshold: Option<f64>,
    /// Train a single stage on the initial labels.
    #[arg(long)]
    pub no_self_training: bool,
}

impl TrainFlags {
    pub fn apply(&self, t: &mut TrainConfig) {
        set(&mut t.epochs, &self.epochs);
        set(&mut t.weights.offset, &self.lambda_offset);
        set(&mut t.weights.scale, &self.lambda_scale);
        set(&mut t.weights.adv, &self.lambda_adv);
        set(&mut t.weights.dis, &self.lambda_dis);
        set(&mut t.max_stages, &self.max_stages);
        set(&mut t.mining_threshold, &self.mining_threshold);
        if self.no_self_training {
            t.self_training = false;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unset_flags_leave_values_alone() {
        let mut t = TrainConfig::default();
        TrainFlags::default().apply(&mut t);
        assert_eq!(t, TrainConfig::default());
        let mut o = OptimConfig::default();
        OptimFlags::default().apply(&mut o);
        assert_eq!(o, OptimConfig::default());
    }

    #[test]
    fn set_flags_override() {
        let mut t = TrainConfig::default();
        TrainFlags {
            lambda_adv: Some(0.0),
            epochs: Some(3),
            no_self_training: true,
            ..Default::default()
        }
        .apply(&mut t);
        assert_eq!((t.weights.adv, t.epochs, t.self_training), (0.0, 3, false));
        let mut m = ModelConfig::default();
        ModelFlags {
            crop_size: Some(64),
            backbone: None,
        }
        .apply(&mut m);
        assert_eq!((m.crop_size, m.feature_size), (64, 8));
    }
}
