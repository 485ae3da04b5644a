//! Safetensors checkpoints carrying the model configuration and the template-library hash.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParamStore};
use crate::templates::TemplateLibrary;

pub const CHECKPOINT_FORMAT: &str = "tempose-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointKind {
    /// Generator parameters plus the discriminator under `disc.`.
    PoseModel,
    Teacher,
    Regression,
    Heatmap,
}

impl CheckpointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckpointKind::PoseModel => "pose-model",
            CheckpointKind::Teacher => "teacher",
            CheckpointKind::Regression => "regression",
            CheckpointKind::Heatmap => "heatmap",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::Checkpoint(format!("unknown checkpoint kind {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub config: ModelConfig,
    pub library_hash: Option<String>,
    /// Free-form JSON metadata such as the training configuration.
    pub extra: BTreeMap<String, String>,
    pub tensors: HashMap<String, Tensor>,
}

const RESERVED: [&str; 5] = ["format", "version", "kind", "model_config", "library_hash"];

impl Checkpoint {
    pub fn new(kind: CheckpointKind, config: &ModelConfig, library: Option<&TemplateLibrary>, stores: &[&ParamStore]) -> Result<Self> {
        let mut tensors = HashMap::new();
        for s in stores {
            for (name, t) in s.tensors() {
                if tensors.insert(name.clone(), t).is_some() {
                    return Err(Error::Checkpoint(format!("parameter {name} appears in two stores")));
                }
            }
        }
        Ok(Checkpoint {
            kind,
            config: config.clone(),
            library_hash: library.map(TemplateLibrary::hash),
            extra: BTreeMap::new(),
            tensors,
        })
    }

    pub fn with_extra(mut self, key: &str, value: String) -> Self {
        self.extra.insert(key.into(), value);
        self
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut meta: HashMap<String, String> = self
            .extra
            .iter()
            .filter(|(k, _)| !RESERVED.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        meta.insert("format".into(), CHECKPOINT_FORMAT.into());
        meta.insert("version".into(), CHECKPOINT_VERSION.to_string());
        meta.insert("kind".into(), self.kind.as_str().into());
        meta.insert(
            "model_config".into(),
            serde_json::to_string(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?,
        );
        if let Some(h) = &self.library_hash {
            meta.insert("library_hash".into(), h.clone());
        }
        let mut named: Vec<(&String, &Tensor)> = self.tensors.iter().collect();
        named.sort_by(|a, b| a.0.cmp(b.0));
        let contiguous: Vec<(String, Tensor)> = named
            .into_iter()
            .map(|(n, t)| Ok((n.clone(), t.contiguous()?)))
            .collect::<Result<_>>()?;
        safetensors::serialize_to_file(contiguous.iter().map(|(n, t)| (n.as_str(), t)), Some(meta), path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
        let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
        let meta = header.metadata().clone().unwrap_or_default();
        let get = |k: &str| meta.get(k).cloned().ok_or_else(|| bad(format!("missing {k} metadata")));
        if get("format")? != CHECKPOINT_FORMAT {
            return Err(bad("not a tempose checkpoint".into()));
        }
        let version: u32 = get("version")?.parse().map_err(|_| bad("bad version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let kind = CheckpointKind::parse(&get("kind")?)?;
        let config: ModelConfig = serde_json::from_str(&get("model_config")?).map_err(|e| bad(e.to_string()))?;
        let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
        let extra = meta
            .iter()
            .filter(|(k, _)| !RESERVED.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ok(Checkpoint {
            kind,
            config,
            library_hash: meta.get("library_hash").cloned(),
            extra,
            tensors,
        })
    }

    pub fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {} checkpoint, found {}",
                kind.as_str(),
                self.kind.as_str()
            )));
        }
        Ok(())
    }

    /// Refuse to pair the checkpoint with a library other than the one it was trained with.
    pub fn verify_library(&self, library: &TemplateLibrary) -> Result<()> {
        match &self.library_hash {
            Some(h) if *h != library.hash() => Err(Error::Checkpoint(format!(
                "checkpoint was trained with template library {h}, got {}",
                library.hash()
            ))),
            _ => Ok(()),
        }
    }

    /// Parameter store pre-filled with the tensors whose names satisfy `keep`.
    pub fn store(&self, dtype: candle_core::DType, keep: impl Fn(&str) -> bool) -> ParamStore {
        let picked = self
            .tensors
            .iter()
            .filter(|(k, _)| keep(k))
            .map(|(k, t)| (k.clone(), t.clone()))
            .collect();
        ParamStore::from_tensors(picked, dtype)
    }
}

/// Names of discriminator parameters.
pub fn is_discriminator(name: &str) -> bool {
    name.starts_with("disc.")
}
