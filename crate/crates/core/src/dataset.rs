//! On-disk datasets: a JSON manifest of samples with PNG images, plus an optional truth
//! sidecar written by the synthetic generator.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::scene::{SceneImage, SceneSample};
use crate::synth::{SampleTruth, SyntheticSample, WorldConfig};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const WORLD_FILE: &str = "world.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Image path relative to the manifest's directory.
    pub image: String,
    pub target: [f64; 2],
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub samples: Vec<ManifestEntry>,
}

/// A loaded dataset, optionally with diagnostic truth aligned to `samples`.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<SceneSample>,
    pub truth: Option<Vec<SampleTruth>>,
}

impl Dataset {
    pub fn from_synthetic(samples: Vec<SyntheticSample>) -> Self {
        let (samples, truth) = samples.into_iter().map(|s| (s.sample, s.truth)).unzip();
        Dataset {
            samples,
            truth: Some(truth),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Subset in the given index order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            truth: self
                .truth
                .as_ref()
                .map(|t| indices.iter().map(|&i| t[i].clone()).collect()),
        }
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.samples.iter().map(|s| s.gt_pose.clone()).collect()
    }

    /// Ground-truth poses in each sample's crop frame, the frame templates are built in.
    pub fn crop_poses(&self) -> Result<Vec<Pose>> {
        self.samples.iter().map(|s| s.to_crop_frame(&s.gt_pose)).collect()
    }

    /// Load `dir/manifest.json` (or a manifest file path) and its images.
    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let manifest_path = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| {
            Error::parse(&manifest_path, format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::parse(
                &manifest_path,
                format!("unsupported manifest version {}", manifest.version),
            ));
        }
        let mut samples = Vec::with_capacity(manifest.samples.len());
        for entry in manifest.samples {
            let image = Arc::new(SceneImage::load_png(root.join(&entry.image))?);
            samples.push(SceneSample::new(entry.id, image, entry.target, entry.pose)?);
        }
        let truth_path = root.join(TRUTH_FILE);
        let truth = if truth_path.exists() {
            let all = read_truth(&truth_path)?;
            let by_id: HashMap<&str, &SampleTruth> = all.iter().map(|t| (t.id.as_str(), t)).collect();
            samples
                .iter()
                .map(|s| by_id.get(s.id.as_str()).map(|t| (*t).clone()))
                .collect::<Option<Vec<_>>>()
        } else {
            None
        };
        Ok(Dataset { samples, truth })
    }

    /// Write images, manifest and (if present) truth sidecar into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let images = dir.join("images");
        fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        let mut entries = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            let rel = format!("images/{}.png", s.id);
            s.image.save_png(dir.join(&rel))?;
            entries.push(ManifestEntry {
                id: s.id.clone(),
                image: rel,
                target: s.target,
                pose: s.gt_pose.clone(),
            });
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            samples: entries,
        };
        write_json(&dir.join(MANIFEST_FILE), &manifest)?;
        if let Some(truth) = &self.truth {
            write_json(&dir.join(TRUTH_FILE), truth)?;
        }
        Ok(())
    }
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_truth(path: &Path) -> Result<Vec<SampleTruth>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::parse(path, format!("line {} column {}: {e}", e.line(), e.column())))
}

/// Write a generated dataset and the world it came from.
pub fn save_synthetic(dir: impl AsRef<Path>, world: &WorldConfig, samples: Vec<SyntheticSample>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let ds = Dataset::from_synthetic(samples);
    ds.save(dir)?;
    write_json(&dir.join(WORLD_FILE), world)?;
    Ok(dir.join(MANIFEST_FILE))
}
