//! Losses, optimizers, teacher pretraining, baseline training and the multi-stage
//! self-training loop.

pub mod baselines;
pub mod data;
pub mod labels;
pub mod losses;
pub mod optim;
pub mod teacher;
pub mod trainer;

use serde::{Deserialize, Serialize};

pub use data::{prepare, PreparedSample};
pub use labels::{self_training_update, LabelState, DEFAULT_MINING_THRESHOLD};
pub use losses::LossWeights;
pub use optim::{OptimConfig, Sgd};
pub use baselines::BaselineConfig;
pub use teacher::{pretrain_teacher, teacher_embeddings, TeacherConfig, TeacherOutcome};
pub use trainer::{train, MetricRow, TrainOutcome, Trainable};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optim: OptimConfig,
    pub weights: LossWeights,
    /// Total epoch budget across all stages.
    pub epochs: usize,
    pub max_stages: usize,
    /// Epoch cap per stage; 0 means a stage ends only when held-out accuracy declines.
    pub stage_epochs: usize,
    /// Consecutive evaluations below the stage's best accuracy that end a stage.
    pub patience: usize,
    pub held_out_fraction: f64,
    pub mining_threshold: f64,
    pub self_training: bool,
    /// Final learning rate as a fraction of the initial one, reached linearly at the last step.
    pub lr_final_fraction: f64,
    pub eval_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optim: OptimConfig::default(),
            weights: LossWeights::default(),
            epochs: 20,
            max_stages: 5,
            stage_epochs: 0,
            patience: 2,
            held_out_fraction: 0.1,
            mining_threshold: DEFAULT_MINING_THRESHOLD,
            self_training: true,
            lr_final_fraction: 1.0,
            eval_batch: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        self.weights.validate()?;
        if self.epochs == 0 || self.max_stages == 0 || self.patience == 0 || self.eval_batch == 0 {
            return Err(Error::Config("epochs, stages, patience and eval batch must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.held_out_fraction) {
            return Err(Error::Config("held-out fraction must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.mining_threshold) {
            return Err(Error::Config("mining threshold must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.lr_final_fraction) {
            return Err(Error::Config("final learning-rate fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
