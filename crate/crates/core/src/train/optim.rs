//! Stochastic gradient descent with momentum, decoupled per-parameter learning-rate multipliers
//! and L2 weight decay.

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Multiplier on the learning rate of parameters under `backbone.`.
    pub backbone_lr_mult: f64,
    pub batch_size: usize,
    /// Rescale the gradient when its global norm exceeds this; 0 disables.
    pub grad_clip: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-4,
            momentum: 0.0,
            weight_decay: 1e-4,
            backbone_lr_mult: 0.1,
            batch_size: 8,
            grad_clip: 0.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "invalid optimizer settings lr={} momentum={} weight_decay={}",
                self.lr, self.momentum, self.weight_decay
            )));
        }
        if self.batch_size == 0 || self.backbone_lr_mult < 0.0 || self.grad_clip < 0.0 {
            return Err(Error::Config("batch size must be positive, multipliers non-negative".into()));
        }
        Ok(())
    }
}

struct Slot {
    var: Var,
    mult: f64,
    velocity: Option<Tensor>,
}

pub struct Sgd {
    slots: Vec<(String, Slot)>,
    cfg: OptimConfig,
}

impl Sgd {
    /// Optimizer over every variable of `store`.
    pub fn new(store: &ParamStore, cfg: &OptimConfig) -> Result<Self> {
        cfg.validate()?;
        let slots = store
            .vars()
            .iter()
            .map(|(name, var)| {
                let mult = if name.starts_with("backbone.") {
                    cfg.backbone_lr_mult
                } else {
                    1.0
                };
                (
                    name.clone(),
                    Slot {
                        var: var.clone(),
                        mult,
                        velocity: None,
                    },
                )
            })
            .collect();
        Ok(Sgd {
            slots,
            cfg: cfg.clone(),
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Global gradient norm over this optimizer's variables.
    pub fn grad_norm(&self, grads: &GradStore) -> Result<f64> {
        let mut sq = 0.0;
        for (_, s) in &self.slots {
            if let Some(g) = grads.get(s.var.as_tensor()) {
                sq += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            }
        }
        Ok(sq.sqrt())
    }

    /// One update; variables without a gradient only decay.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        let clip = if self.cfg.grad_clip > 0.0 {
            let n = self.grad_norm(grads)?;
            if n > self.cfg.grad_clip {
                self.cfg.grad_clip / n
            } else {
                1.0
            }
        } else {
            1.0
        };
        for (_, s) in self.slots.iter_mut() {
            let theta = s.var.as_tensor();
            let mut d = match grads.get(theta) {
                Some(g) => (g * clip)?,
                None => theta.zeros_like()?,
            };
            if self.cfg.weight_decay > 0.0 {
                d = (d + (theta * self.cfg.weight_decay)?)?;
            }
            // drop the autograd history so the velocity does not chain across steps
            let mut d = d.detach();
            if self.cfg.momentum > 0.0 {
                d = match &s.velocity {
                    Some(v) => ((v * self.cfg.momentum)? + d)?,
                    None => d,
                };
                s.velocity = Some(d.clone());
            }
            let lr = self.cfg.lr * s.mult;
            if lr > 0.0 {
                s.var.set(&(theta - (d * lr)?)?)?;
            }
        }
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|(n, _)| n.as_str())
    }
}
