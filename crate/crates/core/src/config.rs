//! Run configuration: every tunable of a run in one serializable tree.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{DEFAULT_ALPHA, DEFAULT_KS};
use crate::model::ModelConfig;
use crate::synth::WorldConfig;
use crate::templates::Selection;
use crate::train::{BaselineConfig, OptimConfig, TeacherConfig, TrainConfig};

pub const RUN_CONFIG_FILE: &str = "run_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateConfig {
    pub k_prime: usize,
    pub k: usize,
    pub selection: Selection,
    pub max_iter: usize,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        TemplateConfig {
            k_prime: 30,
            k: 14,
            selection: Selection::MaxMin,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub alpha: f64,
    pub mse_multiplier: f64,
    pub batch: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: DEFAULT_KS.to_vec(),
            alpha: DEFAULT_ALPHA,
            mse_multiplier: 1.0,
            batch: 32,
        }
    }
}

/// Input and output locations; relative paths resolve against the working directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: Option<PathBuf>,
    pub test_dataset: Option<PathBuf>,
    pub library: Option<PathBuf>,
    pub teacher: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds parameter initialization and template clustering.
    pub seed: u64,
    pub world: WorldConfig,
    pub templates: TemplateConfig,
    pub model: ModelConfig,
    pub teacher: TeacherConfig,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            world: WorldConfig::default(),
            templates: TemplateConfig::default(),
            model: ModelConfig::default(),
            teacher: TeacherConfig::default(),
            train: TrainConfig::default(),
            baseline: BaselineConfig::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    /// CPU-sized settings for the synthetic four-family world.
    pub fn desk() -> Self {
        let optim = OptimConfig {
            lr: 1e-2,
            momentum: 0.9,
            weight_decay: 1e-4,
            backbone_lr_mult: 1.0,
            batch_size: 8,
            grad_clip: 5.0,
        };
        RunConfig {
            templates: TemplateConfig {
                k_prime: 4,
                k: 4,
                ..Default::default()
            },
            model: ModelConfig {
                num_templates: 4,
                crop_size: 64,
                feature_size: 8,
                channels: 64,
                embed_dim: 64,
                heads: 4,
                scale_layers: 3,
                offset_layers: 1,
                mlp_hidden: 128,
                ffn_dim: 128,
                heatmap_sigma: 1.5,
                ..Default::default()
            },
            teacher: TeacherConfig {
                optim: optim.clone(),
                epochs: 10,
                ..Default::default()
            },
            train: TrainConfig {
                optim: optim.clone(),
                epochs: 20,
                lr_final_fraction: 0.1,
                ..Default::default()
            },
            baseline: BaselineConfig {
                optim,
                epochs: 20,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    /// Parse TOML or JSON, chosen by extension (TOML otherwise).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| Error::parse(path, format!("line {}: {e}", e.line())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::parse(path, e.message().to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Write the resolved configuration as `dir/run_config.toml`.
    pub fn save_to_dir(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join(RUN_CONFIG_FILE);
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.train.validate()?;
        self.teacher.optim.validate()?;
        self.baseline.optim.validate()?;
        let t = &self.templates;
        if t.k == 0 || t.k > t.k_prime || t.max_iter == 0 {
            return Err(Error::Config(format!(
                "template counts need 0 < k <= k_prime, got k={} k_prime={}",
                t.k, t.k_prime
            )));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) || self.eval.batch == 0 {
            return Err(Error::Config("eval ks and batch must be positive".into()));
        }
        // the template count comes from the library, so only the architecture is checked here
        ModelConfig {
            num_templates: t.k,
            ..self.model.clone()
        }
        .validate()
    }
}
