use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hardcase_core::eval::{DEFAULT_KNN_NEIGHBORS, DEFAULT_TEST_FRACTION};
use hardcase_core::filter::DEFAULT_DEPLETION_FACTOR;
use hardcase_core::scoring::DEFAULT_BLOCK_SIZE;
use hardcase_core::CaseMode;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "hardcase",
    version,
    about = "Find difficult samples in labeled embedding datasets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every sample and write the ranked table as CSV.
    Score(ScoreArgs),
    /// Select the top k% difficult samples and write a removal manifest.
    Filter(FilterArgs),
    /// Sweep removal levels and report downstream macro-F1.
    Eval(EvalArgs),
    /// Export a 2-D PCA projection with difficult samples highlighted.
    Project(ProjectArgs),
    /// Generate a seeded Gaussian-blob dataset with label noise.
    Synth(SynthArgs),
    /// Run the review HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Embeddings file (BinaryV1, or CSV when the extension is .csv).
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Labels file (JSONL, or CSV when the extension is .csv).
    #[arg(long)]
    pub labels: PathBuf,
    /// Drop zero-norm embedding rows instead of failing.
    #[arg(long)]
    pub drop_zero_rows: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Case1,
    Case2,
    Both,
}

impl From<ModeArg> for CaseMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Case1 => CaseMode::Case1Only,
            ModeArg::Case2 => CaseMode::Case2Only,
            ModeArg::Both => CaseMode::Both,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PenaltyArgs {
    /// Sigmoid offset.
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    pub a: f64,
    /// Sigmoid slope.
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    pub b: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    pub mode: ModeArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EngineArgs {
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    pub block_size: usize,
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, env = "HARDCASE_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Scores CSV; standard output when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Metadata JSON; defaults to `<out>.meta.json`.
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FilterArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Percentage of samples to remove, in [0, 100].
    #[arg(long, short, allow_negative_numbers = true)]
    pub k: f64,
    #[arg(long, default_value_t = DEFAULT_DEPLETION_FACTOR)]
    pub depletion_factor: f64,
    /// Manifest JSON; standard output when omitted.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Write the surviving labels as JSONL.
    #[arg(long)]
    pub out_labels: Option<PathBuf>,
    /// Write the surviving embeddings (format by extension).
    #[arg(long)]
    pub out_embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierArg {
    NearestCentroid,
    Knn,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Removal percentages to evaluate.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1.0, 3.0, 5.0, 10.0, 20.0])]
    pub k_list: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ClassifierArg::NearestCentroid)]
    pub classifier: ClassifierArg,
    /// Neighbors for `--classifier knn`.
    #[arg(long, default_value_t = DEFAULT_KNN_NEIGHBORS)]
    pub knn_k: usize,
    /// Held-out fraction when the labels carry no split tags.
    #[arg(long, default_value_t = DEFAULT_TEST_FRACTION)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_DEPLETION_FACTOR)]
    pub depletion_factor: f64,
    /// Report CSV.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Full report JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProjectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Percentage of top-ranked samples to highlight.
    #[arg(long, short, default_value_t = 10.0)]
    pub k: f64,
    /// Projection CSV; standard output when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Metadata JSON; defaults to `<out>.meta.json`.
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, short, default_value_t = 8)]
    pub d: usize,
    /// Distance between class centroids.
    #[arg(long, default_value_t = 6.0)]
    pub separation: f64,
    /// Per-coordinate noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Fraction of labels to flip, in [0, 0.5).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub flip_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for embeddings.embd, labels.jsonl and flip_mask.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ServeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, short, default_value_t = 8080)]
    pub port: u16,
    /// Decision log; defaults to `<labels>.audit.jsonl`.
    #[arg(long)]
    pub audit_log: Option<PathBuf>,
    /// Static review UI to serve at `/`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}
