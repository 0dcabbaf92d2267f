use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "neurodissect",
    version,
    about = "Knowledge-aware neuron interpretation for scene classifiers"
)]
pub struct Cli {
    /// TOML file with default settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (also NEURODISSECT_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the planted synthetic dataset.
    Synth(SynthArgs),
    /// Threshold units, score them against concepts and select learned concepts.
    Dissect(DissectArgs),
    /// Derive scoping and identifier core concepts per scene.
    CoreConcepts(CoreConceptsArgs),
    /// Explanation metrics over true and false predictions.
    Explain(ExplainArgs),
    /// Cluster concepts through graph embeddings and report the IoU gain.
    Filter(FilterArgs),
    /// Rank units by contribution and disable the top ones.
    Ablate(AblateArgs),
    /// Train a linear SVM on explanation features.
    RetrainPe(RetrainArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 3)]
    pub scenes: usize,
    #[arg(long, default_value_t = 10)]
    pub images: usize,
    #[arg(long, default_value_t = 16)]
    pub units: usize,
    #[arg(long, default_value_t = 8)]
    pub height: usize,
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
    /// Images recorded as predicted to the next scene.
    #[arg(long, default_value_t = 3)]
    pub forged_errors: usize,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory for reports.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scope {
    /// Concepts seen in the predicted scene's images.
    Predicted,
    /// Concepts seen in the target scene's images.
    Target,
    /// Every concept annotated in the image.
    All,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Predicted => "predicted",
            Scope::Target => "target",
            Scope::All => "all",
        }
    }
}

#[derive(Debug, Args)]
pub struct DissectArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Upper quantile for unit thresholds.
    #[arg(long)]
    pub quantile: Option<f64>,
    #[arg(long, value_enum)]
    pub scope: Option<Scope>,
}

#[derive(Debug, Args)]
pub struct CoreConceptsArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long)]
    pub kg: Option<PathBuf>,
    #[arg(long)]
    pub hops: Option<u32>,
    /// Relations to traverse (comma separated); all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub relations: Option<Vec<String>>,
    #[arg(long)]
    pub fuzzy_floor: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub grid_step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportInputs {
    /// Learned concepts written by `dissect`.
    #[arg(long)]
    pub learned: Option<PathBuf>,
    /// Core concepts written by `core-concepts`.
    #[arg(long)]
    pub core: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub inputs: ReportInputs,
    /// Learned-concept strategies to report (default: all in the file).
    #[arg(long, value_delimiter = ',')]
    pub strategy: Option<Vec<String>>,
    /// Core concept kinds to report (default: all in the file).
    #[arg(long, value_delimiter = ',')]
    pub cc: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long)]
    pub kg: Option<PathBuf>,
    /// Cluster counts to evaluate (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Thresholds written by `dissect`; computed from --quantile otherwise.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long)]
    pub quantile: Option<f64>,
    #[arg(long)]
    pub fuzzy_floor: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f32>,
    #[arg(long)]
    pub margin: Option<f32>,
    #[arg(long)]
    pub negatives: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Positive,
    Negative,
    Both,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub inputs: ReportInputs,
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub cc: Option<String>,
    #[arg(long, value_enum)]
    pub direction: Option<DirectionArg>,
    /// Largest number of units disabled per scene.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RetrainArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[command(flatten)]
    pub inputs: ReportInputs,
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub cc: Option<String>,
    /// SVM regularization constant.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}
