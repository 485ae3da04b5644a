//! Subcommand implementations. Each writes into a fresh run directory and never touches its inputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use candle_core::DType;
use serde::Serialize;

use tempose::checkpoint::{is_discriminator, Checkpoint, CheckpointKind};
use tempose::config::RunConfig;
use tempose::dataset::{save_synthetic, Dataset};
use tempose::eval::{evaluate, model_predictions, single_pose_dump, topk_select, PredictionDump, SamplePrediction};
use tempose::experiment::{
    build_templates, eval_options, model_config_for, run_teacher, run_training, single_template_library, study_csv,
    study_templates, StudyVariant,
};
use tempose::model::network::crops_to_tensor;
use tempose::model::{ForwardOptions, HeatmapBaseline, ParamStore, PoseModel, RegressionBaseline, Teacher};
use tempose::render::save_overlay;
use tempose::scene::{crop_frame_to_pixels, crops_at};
use tempose::synth::generate_range;
use tempose::train::baselines::{predict_heatmap, predict_regression, train_heatmap, train_regression};
use tempose::train::{prepare, teacher_embeddings, PreparedSample};
use tempose::{SceneImage, SceneSample, Selection, TemplateLibrary};

use crate::{BaselineKind, Cli, Command, Common, Preset, SelectionMode};

pub const LIBRARY_FILE: &str = "library.json";
pub const TEACHER_FILE: &str = "teacher.safetensors";
pub const MODEL_FILE: &str = "model.safetensors";
pub const BASELINE_FILE: &str = "baseline.safetensors";

/// Resolve the configuration, create the run directory and dispatch.
pub fn run(cli: Cli) -> Result<PathBuf> {
    let mut cfg = base_config(&cli.common)?;
    apply_command_flags(&mut cfg, &cli.command)?;
    cfg.validate().context("invalid configuration")?;
    let dir = run_dir(&cli.common, cli.command.name())?;
    cfg.paths.out = Some(dir.clone());
    cfg.save_to_dir(&dir)?;
    match &cli.command {
        Command::GenData { n, start, .. } => gen_data(&cfg, &dir, *n, *start),
        Command::BuildTemplates { .. } => build_library_cmd(&cfg, &dir),
        Command::PretrainTeacher { .. } => pretrain_teacher_cmd(&cfg, &dir),
        Command::Train { .. } => train_cmd(&cfg, &dir),
        Command::TrainBaseline { kind, .. } => train_baseline_cmd(&cfg, &dir, *kind),
        Command::Eval { predictions, .. } => eval_cmd(&cfg, &dir, predictions.as_deref()),
        Command::Infer {
            image,
            target_x,
            target_y,
            k,
            zoom,
            ..
        } => infer_cmd(&cfg, &dir, image, [*target_x, *target_y], *k, *zoom),
        Command::StudyTemplates {
            k_prime,
            k,
            k_prime_only,
            ..
        } => study_cmd(&cfg, &dir, *k_prime, k, k_prime_only),
    }?;
    Ok(dir)
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => match common.preset {
            Preset::Desk => RunConfig::desk(),
            Preset::Full => RunConfig::default(),
        },
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
        cfg.teacher.seed = seed;
        cfg.baseline.seed = seed;
    }
    Ok(cfg)
}

fn set_path(slot: &mut Option<PathBuf>, flag: &Option<PathBuf>) {
    if let Some(p) = flag {
        *slot = Some(p.clone());
    }
}

fn apply_command_flags(cfg: &mut RunConfig, cmd: &Command) -> Result<()> {
    let paths = &mut cfg.paths;
    match cmd {
        Command::GenData { world, .. } => world.apply(&mut cfg.world),
        Command::BuildTemplates {
            dataset,
            k_prime,
            k,
            mode,
            indices,
            max_iter,
        } => {
            set_path(&mut paths.dataset, dataset);
            let t = &mut cfg.templates;
            if let Some(v) = k_prime {
                t.k_prime = *v;
            }
            if let Some(v) = k {
                t.k = *v;
            }
            if let Some(v) = max_iter {
                t.max_iter = *v;
            }
            match mode {
                Some(SelectionMode::Explicit) => {
                    if indices.is_empty() {
                        bail!("--mode explicit needs --indices");
                    }
                    t.k = indices.len();
                    t.selection = Selection::Explicit(indices.clone());
                }
                Some(SelectionMode::Maxmin) => t.selection = Selection::MaxMin,
                None if !indices.is_empty() => bail!("--indices needs --mode explicit"),
                None => {}
            }
        }
        Command::PretrainTeacher {
            dataset,
            library,
            epochs,
            optim,
            model,
        } => {
            set_path(&mut paths.dataset, dataset);
            set_path(&mut paths.library, library);
            if let Some(e) = epochs {
                cfg.teacher.epochs = *e;
            }
            optim.apply(&mut cfg.teacher.optim);
            model.apply(&mut cfg.model);
        }
        Command::Train {
            dataset,
            library,
            teacher,
            train,
            optim,
            model,
        } => {
            set_path(&mut paths.dataset, dataset);
            set_path(&mut paths.library, library);
            set_path(&mut paths.teacher, teacher);
            train.apply(&mut cfg.train);
            optim.apply(&mut cfg.train.optim);
            model.apply(&mut cfg.model);
        }
        Command::TrainBaseline {
            dataset,
            epochs,
            optim,
            model,
            ..
        } => {
            set_path(&mut paths.dataset, dataset);
            if let Some(e) = epochs {
                cfg.baseline.epochs = *e;
            }
            optim.apply(&mut cfg.baseline.optim);
            model.apply(&mut cfg.model);
        }
        Command::Eval {
            dataset,
            checkpoint,
            library,
            predictions,
            ks,
            alpha,
            mse_multiplier,
        } => {
            set_path(&mut paths.test_dataset, dataset);
            set_path(&mut paths.checkpoint, checkpoint);
            set_path(&mut paths.library, library);
            if predictions.is_some() {
                paths.checkpoint = None;
            }
            if !ks.is_empty() {
                cfg.eval.ks = ks.clone();
            }
            if let Some(a) = alpha {
                cfg.eval.alpha = *a;
            }
            if let Some(m) = mse_multiplier {
                cfg.eval.mse_multiplier = *m;
            }
        }
        Command::Infer {
            checkpoint, library, k, ..
        } => {
            set_path(&mut paths.checkpoint, checkpoint);
            set_path(&mut paths.library, library);
            if *k == 0 {
                bail!("--k must be positive");
            }
        }
        Command::StudyTemplates {
            dataset,
            test_dataset,
            train,
            optim,
            ..
        } => {
            set_path(&mut paths.dataset, dataset);
            set_path(&mut paths.test_dataset, test_dataset);
            train.apply(&mut cfg.train);
            optim.apply(&mut cfg.train.optim);
        }
    }
    Ok(())
}

fn run_dir(common: &Common, command: &str) -> Result<PathBuf> {
    let dir = match &common.out {
        Some(d) => d.clone(),
        None => {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            common.out_root.join(format!("{command}-{secs}"))
        }
    };
    if dir.exists() {
        let non_empty = fs::read_dir(&dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .next()
            .is_some();
        if non_empty {
            bail!("run directory {} already exists and is not empty", dir.display());
        }
    }
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn required<'a>(path: &'a Option<PathBuf>, what: &str, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| anyhow!("no {what} given; pass {flag} or set it under [paths]"))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let ds = Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))?;
    if ds.is_empty() {
        bail!("dataset {} has no samples", path.display());
    }
    Ok(ds)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

fn write_losses(path: &Path, losses: &[f64]) -> Result<()> {
    let mut s = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    write_text(path, &s)
}

/// The library named in the configuration, or one built from the training scenes and saved.
fn library_for(cfg: &RunConfig, scenes: &[SceneSample], dir: &Path) -> Result<TemplateLibrary> {
    match &cfg.paths.library {
        Some(p) => TemplateLibrary::load(p).with_context(|| format!("loading library {}", p.display())),
        None => {
            let lib = build_templates(scenes, &cfg.templates, cfg.seed)?;
            lib.save(dir.join(LIBRARY_FILE))?;
            Ok(lib)
        }
    }
}

fn gen_data(cfg: &RunConfig, dir: &Path, n: usize, start: usize) -> Result<()> {
    if n == 0 {
        bail!("--n must be positive");
    }
    let samples = generate_range(&cfg.world, start, n)?;
    save_synthetic(dir, &cfg.world, samples)?;
    println!("generated {n} samples starting at index {start}");
    Ok(())
}

fn build_library_cmd(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let ds = load_dataset(required(&cfg.paths.dataset, "dataset", "--dataset")?)?;
    let lib = build_templates(&ds.samples, &cfg.templates, cfg.seed)?;
    lib.save(dir.join(LIBRARY_FILE))?;
    println!(
        "selected {} of {} cluster centers from {} poses, hash {}",
        lib.len(),
        lib.k_prime(),
        ds.len(),
        lib.hash()
    );
    Ok(())
}

fn teacher_checkpoint(cfg: &RunConfig, prepared: &[PreparedSample], lib: &TemplateLibrary, dir: &Path) -> Result<Checkpoint> {
    let t = run_teacher(cfg, prepared, lib)?;
    write_losses(&dir.join("teacher_losses.csv"), &t.outcome.losses)?;
    println!(
        "teacher validation offset loss {:.5} -> {:.5}",
        t.outcome.initial_val, t.outcome.final_val
    );
    let ck = Checkpoint::new(CheckpointKind::Teacher, &model_config_for(&cfg.model, lib), Some(lib), &[&t.store])?;
    ck.save(dir.join(TEACHER_FILE))?;
    Ok(ck)
}

fn pretrain_teacher_cmd(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let ds = load_dataset(required(&cfg.paths.dataset, "dataset", "--dataset")?)?;
    let lib = library_for(cfg, &ds.samples, dir)?;
    let prepared = prepare(&ds.samples, &lib, cfg.model.crop_size)?;
    teacher_checkpoint(cfg, &prepared, &lib, dir)?;
    Ok(())
}

fn load_teacher_embeddings(ck: &Checkpoint, prepared: &[PreparedSample], lib: &TemplateLibrary) -> Result<Vec<Vec<f64>>> {
    ck.expect_kind(CheckpointKind::Teacher)?;
    ck.verify_library(lib)?;
    let mut store = ck.store(DType::F32, |_| true);
    let teacher = Teacher::new(&mut store, &ck.config)?;
    store.finish()?;
    Ok(teacher_embeddings(&teacher, prepared, lib, DType::F32)?)
}

#[derive(Serialize)]
struct TrainSummary {
    epochs_run: usize,
    held_out_accuracy: f64,
    mined_per_stage: Vec<usize>,
    stages: usize,
}

fn train_cmd(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let ds = load_dataset(required(&cfg.paths.dataset, "dataset", "--dataset")?)?;
    let lib = library_for(cfg, &ds.samples, dir)?;
    let prepared = prepare(&ds.samples, &lib, cfg.model.crop_size)?;
    let teacher_v = if cfg.train.weights.dis > 0.0 {
        let ck = match &cfg.paths.teacher {
            Some(p) => Checkpoint::load(p).with_context(|| format!("loading teacher {}", p.display()))?,
            None => {
                log::info!("no teacher checkpoint given, pretraining one");
                teacher_checkpoint(cfg, &prepared, &lib, dir)?
            }
        };
        Some(load_teacher_embeddings(&ck, &prepared, &lib)?)
    } else {
        None
    };
    let metrics_path = dir.join("metrics.csv");
    let mut log = fs::File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?;
    let trained = run_training(cfg, &prepared, &lib, teacher_v.as_deref(), Some(&mut log))?;
    let mcfg = model_config_for(&cfg.model, &lib);
    Checkpoint::new(CheckpointKind::PoseModel, &mcfg, Some(&lib), &[&trained.store, &trained.disc_store])?
        .with_extra("train_config", serde_json::to_string(&cfg.train)?)
        .save(dir.join(MODEL_FILE))?;
    let o = &trained.outcome;
    let summary = TrainSummary {
        epochs_run: o.epochs_run,
        held_out_accuracy: o.final_accuracy,
        mined_per_stage: o.mined.clone(),
        stages: o.labels.stage() + 1,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "trained {} epochs, held-out template accuracy {:.3}, mined {:?}",
        o.epochs_run, o.final_accuracy, o.mined
    );
    Ok(())
}

fn train_baseline_cmd(cfg: &RunConfig, dir: &Path, kind: BaselineKind) -> Result<()> {
    let ds = load_dataset(required(&cfg.paths.dataset, "dataset", "--dataset")?)?;
    let lib = single_template_library(&ds.samples)?;
    let prepared = prepare(&ds.samples, &lib, cfg.model.crop_size)?;
    let idx: Vec<usize> = (0..prepared.len()).collect();
    let mut store = ParamStore::new(DType::F32, cfg.baseline.seed.wrapping_add(202));
    let (ck_kind, losses) = match kind {
        BaselineKind::Regression => {
            let m = RegressionBaseline::new(&mut store, &cfg.model)?;
            (CheckpointKind::Regression, train_regression(&m, &store, &prepared, &idx, &cfg.baseline)?)
        }
        BaselineKind::Heatmap => {
            let m = HeatmapBaseline::new(&mut store, &cfg.model)?;
            (CheckpointKind::Heatmap, train_heatmap(&m, &store, &prepared, &idx, &cfg.baseline)?)
        }
    };
    write_losses(&dir.join("losses.csv"), &losses)?;
    Checkpoint::new(ck_kind, &cfg.model, None, &[&store])?.save(dir.join(BASELINE_FILE))?;
    println!(
        "trained {} baseline, final loss {:.5}",
        ck_kind.as_str(),
        losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn pose_model_from(ck: &Checkpoint, lib: &TemplateLibrary) -> Result<PoseModel> {
    ck.expect_kind(CheckpointKind::PoseModel)?;
    ck.verify_library(lib)?;
    if ck.config.num_templates != lib.len() {
        bail!(
            "checkpoint expects {} templates, library has {}",
            ck.config.num_templates,
            lib.len()
        );
    }
    let mut store = ck.store(DType::F32, |n| !is_discriminator(n));
    let model = PoseModel::new(&mut store, &ck.config, lib.templates())?;
    store.finish()?;
    Ok(model)
}

fn checkpoint_dump(cfg: &RunConfig, ck_path: &Path, scenes: &[SceneSample]) -> Result<PredictionDump> {
    let ck = Checkpoint::load(ck_path).with_context(|| format!("loading checkpoint {}", ck_path.display()))?;
    match ck.kind {
        CheckpointKind::PoseModel => {
            let lib_path = required(&cfg.paths.library, "template library", "--library")?;
            let lib = TemplateLibrary::load(lib_path).with_context(|| format!("loading library {}", lib_path.display()))?;
            let model = pose_model_from(&ck, &lib)?;
            let prepared = prepare(scenes, &lib, ck.config.crop_size)?;
            Ok(model_predictions(&model, scenes, &prepared, cfg.eval.batch, DType::F32)?)
        }
        CheckpointKind::Regression | CheckpointKind::Heatmap => {
            let lib = single_template_library(scenes)?;
            let prepared = prepare(scenes, &lib, ck.config.crop_size)?;
            let idx: Vec<usize> = (0..prepared.len()).collect();
            let mut store = ck.store(DType::F32, |_| true);
            let poses = if ck.kind == CheckpointKind::Regression {
                let m = RegressionBaseline::new(&mut store, &ck.config)?;
                store.finish()?;
                predict_regression(&m, &prepared, &idx, DType::F32)?
            } else {
                let m = HeatmapBaseline::new(&mut store, &ck.config)?;
                store.finish()?;
                predict_heatmap(&m, &prepared, &idx, DType::F32)?
            };
            Ok(single_pose_dump(ck.kind.as_str(), scenes, &poses)?)
        }
        CheckpointKind::Teacher => bail!("a teacher checkpoint does not produce poses"),
    }
}

fn eval_cmd(cfg: &RunConfig, dir: &Path, predictions: Option<&Path>) -> Result<()> {
    let ds = load_dataset(required(&cfg.paths.test_dataset, "dataset", "--dataset")?)?;
    let dump = match (predictions, &cfg.paths.checkpoint) {
        (Some(p), _) => PredictionDump::load(p).with_context(|| format!("loading predictions {}", p.display()))?,
        (None, Some(ck)) => checkpoint_dump(cfg, ck, &ds.samples)?,
        (None, None) => bail!("pass --checkpoint or --predictions"),
    };
    let report = evaluate(&dump, &ds.samples, &eval_options(cfg))?;
    dump.save(dir.join("predictions.json"))?;
    write_text(&dir.join("report.csv"), &report.to_csv()?)?;
    write_text(&dir.join("records.csv"), &report.records_csv()?)?;
    print!("{}", report.pretty());
    Ok(())
}

fn infer_cmd(cfg: &RunConfig, dir: &Path, image: &Path, target: [f64; 2], k: usize, zoom: u32) -> Result<()> {
    let ck_path = required(&cfg.paths.checkpoint, "checkpoint", "--checkpoint")?;
    let lib_path = required(&cfg.paths.library, "template library", "--library")?;
    let ck = Checkpoint::load(ck_path).with_context(|| format!("loading checkpoint {}", ck_path.display()))?;
    let lib = TemplateLibrary::load(lib_path).with_context(|| format!("loading library {}", lib_path.display()))?;
    let model = pose_model_from(&ck, &lib)?;
    let img = SceneImage::load_png(image).with_context(|| format!("loading image {}", image.display()))?;
    let [x, y] = target;
    if !(x.is_finite() && y.is_finite() && x >= 0.0 && y >= 0.0 && x <= img.width() as f64 && y <= img.height() as f64) {
        bail!("target ({x}, {y}) lies outside the {}x{} image", img.width(), img.height());
    }
    let input = crops_at(&img, target, ck.config.crop_size);
    let crops = crops_to_tensor(&[&input], DType::F32)?;
    let pred = model
        .forward(&crops, &ForwardOptions::default())?
        .predictions()?
        .into_iter()
        .next()
        .ok_or_else(|| anyhow!("model returned no prediction"))?;
    let h = img.height() as f64;
    let order = topk_select(&pred.scores, k.min(pred.scores.len()));
    let mut shown = Vec::with_capacity(order.len());
    for &t in &order {
        shown.push((crop_frame_to_pixels(&pred.poses[t], target, h)?, pred.scores[t]));
    }
    save_overlay(&img, &shown, zoom, dir.join("overlay.png"))?;
    let dump = PredictionDump {
        method: "template".into(),
        samples: vec![SamplePrediction {
            id: image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            poses: shown.iter().map(|(p, _)| p.clone()).collect(),
            scores: shown.iter().map(|(_, s)| *s).collect(),
        }],
    };
    dump.save(dir.join("predictions.json"))?;
    for (rank, &t) in order.iter().enumerate() {
        println!("#{} template {} score {:.4}", rank + 1, lib.ids()[t], pred.scores[t]);
    }
    Ok(())
}

fn study_cmd(cfg: &RunConfig, dir: &Path, k_prime: usize, ks: &[usize], k_prime_only: &[usize]) -> Result<()> {
    let train = load_dataset(required(&cfg.paths.dataset, "training dataset", "--dataset")?)?;
    let test = load_dataset(required(&cfg.paths.test_dataset, "test dataset", "--test-dataset")?)?;
    let mut variants: Vec<StudyVariant> = k_prime_only.iter().map(|&n| StudyVariant { k_prime: n, k: n }).collect();
    variants.extend(ks.iter().map(|&k| StudyVariant { k_prime, k }));
    if let Some(v) = variants.iter().find(|v| v.k == 0 || v.k > v.k_prime) {
        bail!("template count {} must lie in 1..={}", v.k, v.k_prime);
    }
    let rows = study_templates(cfg, &train.samples, &test.samples, &variants)?;
    let csv = study_csv(&rows)?;
    write_text(&dir.join("table.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}
