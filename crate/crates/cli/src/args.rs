use std::path::PathBuf;

use agiqa_core::data::DatasetProfile;
use agiqa_core::encoder::{Backbone, EncoderSpec, StubEncoderConfig, WEIGHTS_DIR_ENV};
use agiqa_core::experiment::{AblationVariant, CategoryChoice, RunConfig};
use agiqa_core::head::Activation;
use agiqa_core::metrics::PlccMode;
use agiqa_core::model::{ModelConfig, ReadoutKind};
use agiqa_core::report::ReportFormat;
use agiqa_core::train::TrainConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "agiqa", version, about = "Prompt-tuned quality assessment for AI-generated images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train context vectors and the regression head on a manifest.
    Train(TrainCmd),
    /// Score a checkpoint on a manifest split and emit an EvalReport.
    Eval(EvalCmd),
    /// Print one score per image file.
    Score(ScoreCmd),
    /// Run a set of ablation variants and render the comparison.
    Ablate(AblateCmd),
    /// PLCC / SRCC / KRCC from a two-column CSV of predicted and subjective scores.
    Metrics(MetricsCmd),
    /// Render saved reports as JSON, CSV, a markdown table or an SVG plot.
    Report(ReportCmd),
    /// Executes one serialized run config (used by `ablate --jobs`).
    #[command(hide = true)]
    Worker(WorkerCmd),
}

#[derive(Args, Clone)]
pub struct EncoderArgs {
    /// Use the deterministic stub encoder instead of pretrained weights.
    #[arg(long)]
    pub stub_encoder: bool,
    #[arg(long, default_value = "ViT-B/16")]
    pub backbone: Backbone,
    #[arg(long, default_value_t = 512)]
    pub stub_width: usize,
    #[arg(long, default_value_t = 224)]
    pub stub_image_size: usize,
    #[arg(long, default_value_t = 77)]
    pub stub_context_window: usize,
    /// Pretrained weight cache.
    #[arg(long, env = WEIGHTS_DIR_ENV)]
    pub weights_dir: Option<PathBuf>,
}

impl EncoderArgs {
    pub fn spec(&self) -> EncoderSpec {
        if !self.stub_encoder {
            return EncoderSpec::Pretrained {
                backbone: self.backbone,
            };
        }
        let mut cfg = StubEncoderConfig::for_backbone(self.backbone);
        cfg.width = self.stub_width;
        cfg.context_window = self.stub_context_window;
        cfg.image_size = self.stub_image_size;
        if cfg.image_size % cfg.patch_size != 0 {
            cfg.patch_size = cfg.image_size;
        }
        EncoderSpec::Stub(cfg)
    }
}

#[derive(Args, Clone)]
pub struct DataArgs {
    /// CSV with `image,mos` columns (plus one column per extra target).
    #[arg(long)]
    pub manifest: PathBuf,
    /// agiqa-3k, aigciqa2023, or custom:LO:HI[:dims]
    #[arg(long, default_value = "agiqa-3k")]
    pub profile: DatasetProfile,
    #[arg(long, default_value = "quality")]
    pub target: String,
    #[arg(long, default_value_t = 0.8)]
    pub split_ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Reuse a saved split sidecar instead of drawing a new split.
    #[arg(long)]
    pub split: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ReadoutArg {
    Regression,
    Similarity,
}

/// Mirrors the fields of `TrainConfig` and `ModelConfig`.
#[derive(Args, Clone)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 0.002)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 16)]
    pub context_length: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup_epochs: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub warmup_lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    #[arg(long, default_value_t = 10)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 512)]
    pub hidden_width: usize,
    #[arg(long, default_value = "relu")]
    pub activation: Activation,
    /// L2-normalize features before fusion.
    #[arg(long)]
    pub normalize_features: bool,
    /// adjectives, adjectives8, numeric, or a comma-separated list (worst first).
    #[arg(long, default_value = "adjectives")]
    pub categories: CategoryChoice,
    #[arg(long, value_enum, default_value = "regression")]
    pub readout: ReadoutArg,
    /// Fit a 4-parameter logistic before computing PLCC.
    #[arg(long)]
    pub logistic: bool,
}

impl TrainArgs {
    pub fn run_config(&self, data: &DataArgs, enc: &EncoderArgs) -> RunConfig {
        let readout = match self.readout {
            ReadoutArg::Regression => ReadoutKind::Regression,
            ReadoutArg::Similarity => ReadoutKind::Similarity,
        };
        RunConfig {
            dataset: data.profile.name().to_string(),
            target_dim: data.target.clone(),
            variant: AblationVariant::for_settings(
                enc.backbone,
                self.context_length,
                self.categories.clone(),
                readout,
            ),
            encoder: enc.spec(),
            train: TrainConfig {
                lr: self.lr,
                epochs: self.epochs,
                batch_size: self.batch_size,
                context_length: self.context_length,
                warmup_epochs: self.warmup_epochs,
                warmup_lr: self.warmup_lr,
                seed: self.seed,
                backbone: enc.backbone,
                momentum: self.momentum,
                eval_every: self.eval_every,
            },
            model: ModelConfig {
                categories: self.categories.set(),
                hidden_width: self.hidden_width,
                activation: self.activation,
                normalize_features: self.normalize_features,
                readout,
            },
            split_ratio: data.split_ratio,
            split_seed: data.split_seed,
            plcc_mode: if self.logistic {
                PlccMode::Logistic
            } else {
                PlccMode::Raw
            },
        }
    }
}

#[derive(Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Runs are written to `<out>/<config hash>/`.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Continue from a checkpoint; its stored config replaces the flags.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args)]
pub struct EvalCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Defaults to the dataset recorded in the checkpoint.
    #[arg(long)]
    pub profile: Option<DatasetProfile>,
    /// Split sidecar; without it the checkpoint's split ratio and seed are replayed.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub on: SplitArg,
    #[arg(long)]
    pub logistic: bool,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = WEIGHTS_DIR_ENV)]
    pub weights_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreMode {
    Tuned,
    ZeroShot,
}

#[derive(Args)]
pub struct ScoreCmd {
    #[arg(long, value_enum, default_value = "tuned")]
    pub mode: ScoreMode,
    /// Required for `--mode tuned`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[arg(long, default_value = "Good photo.")]
    pub positive: String,
    #[arg(long, default_value = "Bad photo.")]
    pub negative: String,
    /// Image files or glob patterns.
    #[arg(required = true)]
    pub images: Vec<String>,
}

#[derive(Args)]
pub struct AblateCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Comma-separated variant keys, or `default` for the whole matrix.
    #[arg(long, default_value = "default")]
    pub variants: String,
    /// Worker processes; 1 runs variants sequentially in-process.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct MetricsCmd {
    pub csv: PathBuf,
    #[arg(long)]
    pub logistic: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct ReportCmd {
    /// Report files (.json or .csv).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "markdown")]
    pub format: ReportFormat,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct WorkerCmd {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub profile: DatasetProfile,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub timestamp: String,
    #[arg(long, env = WEIGHTS_DIR_ENV)]
    pub weights_dir: Option<PathBuf>,
}
