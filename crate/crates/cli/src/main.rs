//! `tempose`: data generation, template construction, training, evaluation, inference and the
//! template-count study, one run directory per invocation.

mod commands;
mod overrides;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use overrides::{ModelFlags, OptimFlags, TrainFlags, WorldFlags};

#[derive(Parser, Debug)]
#[command(name = "tempose", version, about = "Scene-aware human pose generation from pose templates")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML or JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base settings used when no configuration file is given.
    #[arg(long, value_enum, default_value_t = Preset::Desk, global = true)]
    pub preset: Preset,
    /// Directory that receives run directories.
    #[arg(long, env = "TEMPOSE_OUT", default_value = "runs", global = true)]
    pub out_root: PathBuf,
    /// Run directory; defaults to `<out-root>/<command>-<unix-time>`. Must be new or empty.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for parameter initialization, clustering and batch order.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// CPU-sized model for the synthetic world.
    Desk,
    /// Full-size architecture and optimizer settings.
    Full,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData {
        /// Number of samples.
        #[arg(long)]
        n: usize,
        /// Index of the first sample; disjoint ranges give disjoint splits.
        #[arg(long, default_value_t = 0)]
        start: usize,
        #[command(flatten)]
        world: WorldFlags,
    },
    /// Cluster the dataset's poses and select templates.
    BuildTemplates {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        k_prime: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<SelectionMode>,
        /// Center indices for `--mode explicit`.
        #[arg(long, value_delimiter = ',')]
        indices: Vec<usize>,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Pretrain the distillation teacher.
    PretrainTeacher {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        optim: OptimFlags,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Train the full model.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        library: Option<PathBuf>,
        /// Teacher checkpoint; required when the distillation weight is positive.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        optim: OptimFlags,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Train a single-pose baseline.
    TrainBaseline {
        #[arg(long, value_enum)]
        kind: BaselineKind,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        optim: OptimFlags,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Score a checkpoint or a prediction dump on a dataset.
    Eval {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, conflicts_with = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Template library of a full-model checkpoint.
        #[arg(long)]
        library: Option<PathBuf>,
        /// Prediction dump from any method.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        ks: Vec<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        mse_multiplier: Option<f64>,
    },
    /// Predict top-k poses for one image and target point and render them.
    Infer {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        target_x: f64,
        #[arg(long)]
        target_y: f64,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Upscaling factor of the overlay image.
        #[arg(long, default_value_t = 4)]
        zoom: u32,
    },
    /// Train and evaluate one model per template count.
    StudyTemplates {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        test_dataset: Option<PathBuf>,
        /// Cluster count used for the selection columns.
        #[arg(long, default_value_t = 30)]
        k_prime: usize,
        /// Selected template counts.
        #[arg(long, value_delimiter = ',', default_values_t = [7, 10, 14, 20])]
        k: Vec<usize>,
        /// Cluster counts evaluated without selection.
        #[arg(long, value_delimiter = ',')]
        k_prime_only: Vec<usize>,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        optim: OptimFlags,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    Maxmin,
    Explicit,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Regression,
    Heatmap,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::BuildTemplates { .. } => "build-templates",
            Command::PretrainTeacher { .. } => "pretrain-teacher",
            Command::Train { .. } => "train",
            Command::TrainBaseline { .. } => "train-baseline",
            Command::Eval { .. } => "eval",
            Command::Infer { .. } => "infer",
            Command::StudyTemplates { .. } => "study-templates",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // help and version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("{first}");
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(dir) => {
            println!("run directory: {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let line = format!("error: {e:#}").replace('\n', " ");
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
