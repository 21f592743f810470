use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "dppsel", version, about = "Diverse subset selection and dataset diversity measurement")]
pub struct Cli {
    /// Worker threads (defaults to available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: log::LevelFilter,

    /// Base directory for relative output paths.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", content = "args", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic feature matrix.
    Synth(SynthArgs),
    /// Generate a toy corpus with per-example gradients and quality scores.
    Toy(ToyArgs),
    /// Sketch per-example gradient files into a feature matrix.
    Sketch(SketchArgs),
    /// Select a subset of rows.
    Select(SelectArgs),
    /// Measure log determinant distance against a hypersphere reference.
    Diversity(DiversityArgs),
    /// Merge diversity reports into one long-format CSV.
    Report(ReportArgs),
    /// Re-run a command from its config echo.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Toy(_) => "toy",
            Command::Sketch(_) => "sketch",
            Command::Select(_) => "select",
            Command::Diversity(_) => "diversity",
            Command::Report(_) => "report",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKindArg {
    Hypersphere,
    Clustered,
    Duplicated,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKindArg,
    #[arg(short = 'n', long)]
    pub n: usize,
    #[arg(short = 'd', long)]
    pub d: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of clusters (clustered only).
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Intra-cluster noise scale (clustered only).
    #[arg(long)]
    pub scale: Option<f64>,
    /// Copies per base row (duplicated only).
    #[arg(long)]
    pub dup_factor: Option<usize>,
    /// Output DSF1 file.
    #[arg(short = 'o', long)]
    pub output: PathBuf,
    /// Also write the generating group of each row, one per line.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ToyArgs {
    #[arg(short = 'n', long)]
    pub n: usize,
    /// Fraction of near-duplicate examples, in [0, 1].
    #[arg(long)]
    pub redundancy: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = dppsel::toymodel::TOY_DIM)]
    pub dim: usize,
    /// Standard deviation of the random model weights.
    #[arg(long, default_value_t = 1.0)]
    pub weight_scale: f64,
    /// Output directory.
    #[arg(short = 'o', long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SketchArgs {
    /// Directory of .dgf files (sorted by name), a manifest listing them, or a
    /// directory holding `manifest.txt`.
    #[arg(long)]
    pub grads: PathBuf,
    /// Row-projection rank.
    #[arg(long = "r")]
    pub r: usize,
    #[arg(long = "dout", default_value_t = dppsel::sketch::DEFAULT_D_OUT)]
    pub d_out: usize,
    /// Nonzeros per column of the sparse transform.
    #[arg(long = "s", default_value_t = dppsel::sketch::DEFAULT_SPARSITY)]
    pub s: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scale every sketched row to unit length.
    #[arg(long)]
    pub normalize: bool,
    #[arg(short = 'o', long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyArg {
    Dpp,
    Random,
    Rank,
    Dedup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionArg {
    Asc,
    Desc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformArg {
    Rank,
    MinMax,
    Identity,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SelectArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Score table (CSV or JSONL).
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    /// Number of items, or a percentage of N such as `20%`.
    #[arg(long)]
    pub budget: String,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub quality_col: Option<String>,
    #[arg(long, value_enum)]
    pub quality_transform: Option<TransformArg>,
    #[arg(long)]
    pub rank_col: Option<String>,
    #[arg(long, value_enum)]
    pub direction: Option<DirectionArg>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ground-truth group labels, one per line, for coverage metrics.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Selection result JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Greedy trace CSV (dpp only).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Selected indices, one per line.
    #[arg(long)]
    pub indices: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefArg {
    Sphere,
    File,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DiversityArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long = "ref", value_enum, default_value = "sphere")]
    pub reference: RefArg,
    /// Reference feature file (with `--ref file`).
    #[arg(long)]
    pub ref_file: Option<PathBuf>,
    /// Reference dimension (with `--ref sphere`, default 4096).
    #[arg(long)]
    pub ref_dim: Option<usize>,
    /// Reference seed (with `--ref sphere`, default 0).
    #[arg(long)]
    pub ref_seed: Option<u64>,
    /// Dataset name stored in the report.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub out_report: Option<PathBuf>,
    #[arg(long)]
    pub out_curve: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Diversity report JSON files.
    pub inputs: Vec<PathBuf>,
    #[arg(short = 'o', long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// A `.config.json` written by an earlier run.
    pub config: PathBuf,
}
