use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use topsearch_core::harness::POPULATION_THRESHOLD;
use topsearch_core::{ModelKind, StateFips};

#[derive(Debug, Parser)]
#[command(name = "topsearch", version, about = "Search-signature features and spatial prediction benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a seeded synthetic world with oracle record.
    Synth(SynthArgs),
    /// Build the ranked query vocabulary from a query log.
    BuildVocab(BuildVocabArgs),
    /// Turn a query log into per-zip signatures over a fixed vocabulary.
    Vectorize(VectorizeArgs),
    /// County-blocked holdout and CV folds.
    Split(SplitArgs),
    /// Imputation benchmark on a county-blocked split.
    Impute(TaskArgs),
    /// Leave-states-out or two-state extrapolation.
    Extrapolate(ExtrapolateArgs),
    /// Train on county labels, predict zips.
    Superres(SuperresArgs),
    /// Training-fraction and feature-dimension sweeps.
    Ablate(AblateArgs),
    /// Summaries over existing report files.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::BuildVocab(_) => "build-vocab",
            Command::Vectorize(_) => "vectorize",
            Command::Split(_) => "split",
            Command::Impute(_) => "impute",
            Command::Extrapolate(_) => "extrapolate",
            Command::Superres(_) => "superres",
            Command::Ablate(_) => "ablate",
            Command::Report(_) => "report",
        }
    }
}

/// Output location; not echoed so that runs into different directories
/// produce identical trees.
#[derive(Debug, Args)]
pub struct OutArgs {
    #[arg(long)]
    pub out: PathBuf,
}

impl Serialize for OutArgs {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_unit()
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GeoArgs {
    #[arg(long)]
    pub geography: PathBuf,
    /// Zip-county overlap areas; when given, each zip's county is re-derived
    /// from its largest overlap.
    #[arg(long)]
    pub overlaps: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ManifestArgs {
    /// Vocabulary size V.
    #[arg(long, default_value_t = 1000)]
    pub vocab_size: usize,
    /// Per-region top-K queries.
    #[arg(long, default_value_t = 500)]
    pub per_region_top: usize,
    /// Minimum count C_min for a query to enter a region's top set.
    #[arg(long, default_value_t = 20)]
    pub min_count: u64,
    /// Zero fraction above which a signature is treated as absent.
    #[arg(long, default_value_t = 0.98)]
    pub sparsity_threshold: f64,
    #[arg(long, default_value = "")]
    pub time_window: String,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SynthArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 49)]
    pub n_states: usize,
    #[arg(long, default_value_t = 400)]
    pub n_counties: usize,
    #[arg(long, default_value_t = 2000)]
    pub n_zips: usize,
    /// Vocabulary size used to build the signatures that define labels.
    #[arg(long, default_value_t = 200)]
    pub vocab_size: usize,
    /// Size of the query universe.
    #[arg(long, default_value_t = 1200)]
    pub n_queries: usize,
    #[arg(long, default_value_t = 0.02)]
    pub absent_rate: f64,
    /// `NAME:KIND[:sigma=S][:r2=R]`, KIND one of linear, smooth, shifted,
    /// noise. Repeatable; defaults to `linear:linear` and `smooth:smooth`.
    #[arg(long = "label")]
    pub labels: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildVocabArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
    #[arg(long)]
    pub query_log: PathBuf,
    #[command(flatten)]
    pub manifest: ManifestArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct VectorizeArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
    #[arg(long)]
    pub query_log: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[command(flatten)]
    pub geo: GeoArgs,
    #[arg(long, default_value_t = 0.98)]
    pub sparsity_threshold: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct PopArgs {
    /// Restrict training and evaluation to zips above the threshold.
    #[arg(long)]
    pub pop_filter: bool,
    #[arg(long, default_value_t = POPULATION_THRESHOLD)]
    pub pop_threshold: u64,
}

impl PopArgs {
    pub fn threshold(&self) -> Option<u64> {
        self.pop_filter.then_some(self.pop_threshold)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
    #[command(flatten)]
    pub geo: GeoArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub holdout_frac: f64,
    #[arg(long, default_value_t = 5)]
    pub folds: u32,
    #[command(flatten)]
    pub pop: PopArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    /// Models to run; all three by default.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<ModelKind>,
    /// Ridge penalty grid; defaults to 10^-3 .. 10^3 in half-decade steps.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Vec<f64>,
    #[arg(long, default_value_t = 2.0)]
    pub idw_power: f64,
    #[arg(long, default_value_t = 12)]
    pub idw_k: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub idw_epsilon_km: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TaskArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
    #[command(flatten)]
    pub geo: GeoArgs,
    #[arg(long)]
    pub signatures: PathBuf,
    /// Zip label tables (`labels_<variable>.csv`). Repeatable.
    #[arg(long, required = true)]
    pub labels: Vec<PathBuf>,
    /// Variable name when a single label file is not named after it.
    #[arg(long)]
    pub variable: Option<String>,
    /// Precomputed split; generated from the seed when absent.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CV folds; 5 by default, 10 for state extrapolation.
    #[arg(long)]
    pub folds: Option<u32>,
    #[arg(long, default_value_t = 5)]
    pub inner_folds: u32,
    #[arg(long, default_value_t = 0.2)]
    pub holdout_frac: f64,
    #[command(flatten)]
    pub pop: PopArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Worker threads; 1 keeps everything on the calling thread.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Store wall-clock runtimes in reports (makes output nondeterministic).
    #[arg(long)]
    pub record_runtime: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtrapolationMode {
    States,
    Pair,
}

#[derive(Debug, Args, Serialize)]
pub struct ExtrapolateArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long, value_enum, default_value_t = ExtrapolationMode::States)]
    pub mode: ExtrapolationMode,
    /// Training states for pair mode.
    #[arg(long, value_delimiter = ',', default_value = "48,12")]
    pub source_states: Vec<StateFips>,
}

#[derive(Debug, Args, Serialize)]
pub struct SuperresArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    /// County label tables (`county_labels_<variable>.csv`). Repeatable.
    #[arg(long, required = true)]
    pub county_labels: Vec<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,1.0")]
    pub train_fractions: Vec<f64>,
    /// Feature dimensions; defaults to the training fractions times V.
    #[arg(long, value_delimiter = ',')]
    pub feature_dims: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub ablation_seeds: u32,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
    /// Directories holding `report_*.json` files. Repeatable.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
}
