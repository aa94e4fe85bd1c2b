//! `cascade-search`: pools, searches, evaluation and front analysis.
//!
//! Exit status: 0 on success, 1 when the work itself fails (invalid pool,
//! search error, unparsable front), 2 on a malformed invocation.

mod analyze_cmd;
mod common;
mod eval_cmd;
mod pool_cmd;
mod search_cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use common::UsageError;

#[derive(Parser)]
#[command(
    name = "cascade-search",
    version,
    about = "Search for cascades of pre-evaluated classifiers"
)]
struct Cli {
    /// Worker threads for evaluation (defaults to all cores).
    #[arg(long, global = true, env = "CASCADE_SEARCH_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create, check and reshape model pools.
    #[command(subcommand)]
    Pool(PoolCommand),
    /// Search a pool for the MFLOPs/accuracy trade-off front.
    Search(SearchArgs),
    /// Evaluate one cascade on a pool.
    Eval(EvalArgs),
    /// Hypervolume, filtering and export of front files.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Subcommand)]
pub enum PoolCommand {
    /// Load a pool and report its shape and per-model accuracy.
    Validate { manifest: PathBuf },
    /// Generate a synthetic pool from a JSON spec.
    Synth {
        spec: PathBuf,
        out_dir: PathBuf,
        /// Overrides the seed in the spec.
        #[arg(long)]
        seed: u64,
    },
    /// Merge pools over the same samples: `merge a.json b.json ... OUT_DIR`.
    Merge {
        #[arg(required = true, num_args = 3.., value_name = "MANIFESTS... OUT_DIR")]
        paths: Vec<PathBuf>,
    },
    /// Split samples into `<out>/val` (the given fraction) and `<out>/test`.
    Split {
        manifest: PathBuf,
        out_dir: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long)]
        seed: u64,
    },
    /// Build a pool from CSV files.
    ImportCsv {
        /// One class index per row.
        #[arg(long)]
        labels: PathBuf,
        /// `ID:MFLOPS:PATH` of a CSV with one probability row per sample.
        #[arg(long = "model", required = true)]
        models: Vec<String>,
        #[arg(long, default_value = "imported")]
        name: String,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Mogomea,
    Random,
    Exhaustive,
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Cascade,
    Ensemble,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ConfidenceArg {
    MaxProb,
    TopGap,
}

impl From<ConfidenceArg> for cascade_search::ConfidenceMode {
    fn from(c: ConfidenceArg) -> Self {
        match c {
            ConfidenceArg::MaxProb => Self::MaxProb,
            ConfidenceArg::TopGap => Self::TopGap,
        }
    }
}

#[derive(Args, Clone, Debug)]
pub struct SplitArgs {
    /// Fraction of samples in the validation part.
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Args)]
pub struct SearchArgs {
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub confidence: Option<ConfidenceArg>,
    #[arg(long)]
    pub budget: Option<u64>,
    /// Maximum cascade size.
    #[arg(long)]
    pub k: Option<usize>,
    /// Required for the randomized backends.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Step count (`50`) or comma-separated threshold values.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub population_size: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub no_seed_singletons: bool,
    /// Greedy backend: longest cascade built.
    #[arg(long, default_value_t = 3)]
    pub max_stages: usize,
    /// Greedy backend: anchor only the most accurate fraction of models.
    #[arg(long)]
    pub anchor_fraction: Option<f64>,
    /// JSON search configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(short, long, default_value = "front.json")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    All,
    Val,
    Test,
    Both,
}

#[derive(Args)]
pub struct EvalArgs {
    pub manifest: PathBuf,
    /// Path to, or inline JSON of, `{"models": [...], "thresholds": [...]}`
    /// (threshold values), or a front file.
    #[arg(long)]
    pub genome: String,
    /// Entry to take when `--genome` is a front file.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitChoice,
    #[command(flatten)]
    pub split_args: SplitArgs,
    #[arg(long, value_enum, default_value = "max-prob")]
    pub confidence: ConfidenceArg,
}

#[derive(Args, Clone, Debug)]
pub struct TestArgs {
    /// Re-evaluate fronts on this pool before analysis.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// With `--test`: split that pool and use its test part.
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, value_enum, default_value = "max-prob")]
    pub confidence: ConfidenceArg,
}

#[derive(Subcommand)]
pub enum AnalyzeCommand {
    /// Normalized hypervolume; several files add mean and std rows.
    Hv {
        #[arg(required = true)]
        fronts: Vec<PathBuf>,
        #[arg(long, default_value_t = 4000.0)]
        ref_mflops: f64,
        #[arg(long, default_value_t = 60.0)]
        ref_accuracy: f64,
        #[command(flatten)]
        test: TestArgs,
    },
    /// Keep entries whose accuracy improves at one-decimal precision.
    Filter {
        front: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// One entry near every 100 MFLOPs, named `ENCAS@<MFLOPs>`.
    Representative {
        front: PathBuf,
        #[command(flatten)]
        test: TestArgs,
        /// Also write the named entries as a front file.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// CSV of name, MFLOPs and accuracy; several files add a `run` column.
    ExportCsv {
        #[arg(required = true)]
        fronts: Vec<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return common::usage("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match cli.command {
        Command::Pool(cmd) => pool_cmd::run(cmd),
        Command::Search(args) => search_cmd::run(args),
        Command::Eval(args) => eval_cmd::run(args),
        Command::Analyze(cmd) => analyze_cmd::run(cmd),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
