//! Named trainable tensors with deterministic initialization.
//!
//! The CPU backend's random generator cannot be seeded, so every parameter is drawn here from
//! a ChaCha stream in creation order. A store can also be pre-filled from a checkpoint, in which
//! case constructors pick up the stored values instead of drawing new ones.

use std::collections::{BTreeMap, HashMap};

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Uniform(f64),
    Normal(f64),
}

pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    preset: HashMap<String, Tensor>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        ParamStore {
            vars: BTreeMap::new(),
            preset: HashMap::new(),
            dtype,
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// A store whose parameters come from `tensors` (converted to `dtype`).
    pub fn from_tensors(tensors: HashMap<String, Tensor>, dtype: DType) -> Self {
        let mut s = ParamStore::new(dtype, 0);
        s.preset = tensors;
        s
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Create (or fetch from the preset) a variable.
    pub fn var(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::Config(format!("parameter {name} defined twice")));
        }
        let tensor = match self.preset.remove(name) {
            Some(t) => {
                if t.dims() != shape {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.dims()
                    )));
                }
                t.to_dtype(self.dtype)?
            }
            None => {
                let n: usize = shape.iter().product();
                let values: Vec<f64> = match init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::Uniform(b) => {
                        let d = Uniform::new_inclusive(-b, b).map_err(|e| Error::Config(e.to_string()))?;
                        (0..n).map(|_| d.sample(&mut self.rng)).collect()
                    }
                    Init::Normal(std) => {
                        let d = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                        (0..n).map(|_| d.sample(&mut self.rng)).collect()
                    }
                };
                Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?
            }
        };
        let var = Var::from_tensor(&tensor)?;
        let t = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(t)
    }

    /// Fail if checkpoint tensors were left unused.
    pub fn finish(&self) -> Result<()> {
        if let Some(name) = self.preset.keys().min() {
            return Err(Error::Checkpoint(format!("unexpected parameter {name} in checkpoint")));
        }
        Ok(())
    }

    /// Variables in name order.
    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Snapshot of all variables as plain tensors.
    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect()
    }
}
