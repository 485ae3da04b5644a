//! End-to-end pipeline steps shared by the command line, the acceptance suite and the
//! template-count study.

use std::io::Write;
use std::time::Instant;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, TemplateConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, model_predictions, single_pose_dump, EvalOptions, EvalReport};
use crate::model::{Discriminator, ModelConfig, ParamStore, PoseModel, RegressionBaseline, Teacher};
use crate::scene::SceneSample;
use crate::templates::{build_library, TemplateLibrary};
use crate::train::baselines::{predict_regression, train_regression};
use crate::train::teacher::teacher_embeddings;
use crate::train::trainer::Trainable;
use crate::train::{prepare, pretrain_teacher, train, PreparedSample, TeacherOutcome, TrainOutcome};

/// Cluster crop-frame ground-truth poses and select representatives.
pub fn build_templates(scenes: &[SceneSample], cfg: &TemplateConfig, seed: u64) -> Result<TemplateLibrary> {
    let poses = scenes
        .iter()
        .map(|s| s.to_crop_frame(&s.gt_pose))
        .collect::<Result<Vec<_>>>()?;
    build_library(&poses, cfg.k_prime, cfg.k, &cfg.selection, seed, cfg.max_iter)
}

/// The model configuration with `K` taken from the library.
pub fn model_config_for(cfg: &ModelConfig, library: &TemplateLibrary) -> ModelConfig {
    ModelConfig {
        num_templates: library.len(),
        ..cfg.clone()
    }
}

/// A one-template library for preparing samples when only crops and crop-frame poses matter,
/// as for the single-pose baselines.
pub fn single_template_library(scenes: &[SceneSample]) -> Result<TemplateLibrary> {
    let cfg = TemplateConfig {
        k_prime: 1,
        k: 1,
        ..TemplateConfig::default()
    };
    build_templates(scenes, &cfg, 0)
}

pub struct TrainedTeacher {
    pub teacher: Teacher,
    pub store: ParamStore,
    pub outcome: TeacherOutcome,
}

pub fn run_teacher(cfg: &RunConfig, prepared: &[PreparedSample], library: &TemplateLibrary) -> Result<TrainedTeacher> {
    let mcfg = model_config_for(&cfg.model, library);
    let mut store = ParamStore::new(DType::F32, cfg.seed.wrapping_add(101));
    let teacher = Teacher::new(&mut store, &mcfg)?;
    let outcome = pretrain_teacher(&teacher, &store, prepared, library, &cfg.teacher)?;
    Ok(TrainedTeacher {
        teacher,
        store,
        outcome,
    })
}

pub struct TrainedModel {
    pub model: PoseModel,
    pub store: ParamStore,
    pub disc: Discriminator,
    pub disc_store: ParamStore,
    pub outcome: TrainOutcome,
}

pub fn run_training(
    cfg: &RunConfig,
    prepared: &[PreparedSample],
    library: &TemplateLibrary,
    teacher_v: Option<&[Vec<f64>]>,
    log: Option<&mut dyn Write>,
) -> Result<TrainedModel> {
    let mcfg = model_config_for(&cfg.model, library);
    let mut store = ParamStore::new(DType::F32, cfg.seed);
    let model = PoseModel::new(&mut store, &mcfg, library.templates())?;
    let mut disc_store = ParamStore::new(DType::F32, cfg.seed.wrapping_add(1));
    let disc = Discriminator::new(&mut disc_store, &mcfg)?;
    let nets = Trainable {
        model: &model,
        store: &store,
        disc: &disc,
        disc_store: &disc_store,
    };
    let outcome = train(&nets, prepared, teacher_v, &cfg.train, log)?;
    Ok(TrainedModel {
        model,
        store,
        disc,
        disc_store,
        outcome,
    })
}

pub fn eval_options(cfg: &RunConfig) -> EvalOptions {
    EvalOptions {
        ks: cfg.eval.ks.clone(),
        alpha: cfg.eval.alpha,
        mse_multiplier: cfg.eval.mse_multiplier,
    }
}

/// Train the regression baseline on `prepared` and score it on the test scenes.
pub fn run_regression(
    cfg: &RunConfig,
    prepared: &[PreparedSample],
    test_scenes: &[SceneSample],
    test_prepared: &[PreparedSample],
) -> Result<EvalReport> {
    let mut store = ParamStore::new(DType::F32, cfg.seed.wrapping_add(202));
    let model = RegressionBaseline::new(&mut store, &cfg.model)?;
    let idx: Vec<usize> = (0..prepared.len()).collect();
    train_regression(&model, &store, prepared, &idx, &cfg.baseline)?;
    let test_idx: Vec<usize> = (0..test_prepared.len()).collect();
    let poses = predict_regression(&model, test_prepared, &test_idx, DType::F32)?;
    evaluate(&single_pose_dump("regression", test_scenes, &poses)?, test_scenes, &eval_options(cfg))
}

/// Everything produced by one pipeline run.
pub struct PipelineResult {
    pub library: TemplateLibrary,
    pub teacher: Option<TeacherOutcome>,
    pub trained: TrainedModel,
    pub report: EvalReport,
    pub regression: Option<EvalReport>,
    /// Held-out template accuracy on the test scenes.
    pub test_accuracy: f64,
    pub seconds: f64,
}

/// Templates, optional teacher, training and evaluation on `test`.
pub fn run_pipeline(
    cfg: &RunConfig,
    train_scenes: &[SceneSample],
    test_scenes: &[SceneSample],
    with_regression: bool,
) -> Result<PipelineResult> {
    cfg.validate()?;
    let start = Instant::now();
    let library = build_templates(train_scenes, &cfg.templates, cfg.seed)?;
    let crop = cfg.model.crop_size;
    let prepared = prepare(train_scenes, &library, crop)?;
    let test_prepared = prepare(test_scenes, &library, crop)?;
    let (teacher, v) = if cfg.train.weights.dis > 0.0 {
        let t = run_teacher(cfg, &prepared, &library)?;
        let v = teacher_embeddings(&t.teacher, &prepared, &library, DType::F32)?;
        (Some(t.outcome), Some(v))
    } else {
        (None, None)
    };
    let trained = run_training(cfg, &prepared, &library, v.as_deref(), None)?;
    let all: Vec<usize> = (0..test_prepared.len()).collect();
    let test_accuracy = crate::train::trainer::classification_accuracy(
        &trained.model,
        &test_prepared,
        &all,
        cfg.eval.batch,
        DType::F32,
    )?;
    let dump = model_predictions(&trained.model, test_scenes, &test_prepared, cfg.eval.batch, DType::F32)?;
    let report = evaluate(&dump, test_scenes, &eval_options(cfg))?;
    let regression = if with_regression {
        Some(run_regression(cfg, &prepared, test_scenes, &test_prepared)?)
    } else {
        None
    };
    Ok(PipelineResult {
        library,
        teacher,
        trained,
        report,
        regression,
        test_accuracy,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// One column of the template-count study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyVariant {
    pub k_prime: usize,
    pub k: usize,
}

impl StudyVariant {
    /// `K'n` when all cluster centers are kept, `Kn` when selecting.
    pub fn label(&self) -> String {
        if self.k == self.k_prime {
            format!("K'{}", self.k_prime)
        } else {
            format!("K{}", self.k)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub variant: StudyVariant,
    pub report: EvalReport,
}

/// Train and evaluate one model per variant.
pub fn study_templates(
    cfg: &RunConfig,
    train_scenes: &[SceneSample],
    test_scenes: &[SceneSample],
    variants: &[StudyVariant],
) -> Result<Vec<StudyRow>> {
    if variants.is_empty() {
        return Err(Error::Argument("study needs at least one template count".into()));
    }
    variants
        .iter()
        .map(|v| {
            let mut c = cfg.clone();
            c.templates.k_prime = v.k_prime;
            c.templates.k = v.k;
            log::info!("study variant {}", v.label());
            let r = run_pipeline(&c, train_scenes, test_scenes, false)?;
            Ok(StudyRow {
                variant: v.clone(),
                report: r.report,
            })
        })
        .collect()
}

/// Metrics as rows and variants as columns, e.g. `Top-3 PCK,0.41,0.44`.
pub fn study_csv(rows: &[StudyRow]) -> Result<String> {
    let ks = rows.first().map(|r| r.report.ks.clone()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["# templates".to_string()];
    header.extend(rows.iter().map(|r| r.variant.label()));
    w.write_record(&header)?;
    for (metric, pick) in [("PCK", 0usize), ("MSE", 1)] {
        for (j, k) in ks.iter().enumerate() {
            if *k == 1 {
                continue;
            }
            let mut rec = vec![format!("Top-{k} {metric}")];
            for r in rows {
                let v = if pick == 0 { r.report.pck[j] } else { r.report.mse[j] };
                rec.push(format!("{v}"));
            }
            w.write_record(&rec)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Argument(e.to_string()))?;
    Ok(String::from_utf8(bytes).unwrap_or_default())
}
