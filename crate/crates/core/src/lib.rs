//! Template-based scene-aware human pose generation.
//!
//! Given a scene image and a target point, a learned model scores a library of normalized
//! pose templates for compatibility with the scene and refines every template into a concrete
//! pose through a predicted scale and per-keypoint offsets.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod pose;
pub mod render;
pub mod scene;
pub mod synth;
pub mod templates;
pub mod train;

pub use error::{Error, Result};
pub use pose::{BBox, Offsets, Pose, Scale, NUM_KEYPOINTS, POSE_DIM};
pub use scene::{SceneImage, SceneSample};
pub use templates::{Selection, TemplateLibrary};
