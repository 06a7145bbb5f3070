//! Command-line driver for two-dataset prediction-error analysis.
//!
//! Exit codes: 0 success, 1 usage, 2 input/output, 3 enumeration guard,
//! 4 numeric failure.

mod cmds;
mod emit;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use twoset_core::search::Objective;

#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Geyser,
    Diabetes,
    Generic,
}

/// Input selection shared by the data-driven commands.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV file with the raw data.
    #[arg(long)]
    pub data: PathBuf,
    /// How to construct the two datasets from the file.
    #[arg(long, value_enum, default_value_t = Kind::Generic)]
    pub kind: Kind,
    /// 0/1 column naming each row's dataset (generic kind only).
    #[arg(long)]
    pub label_column: Option<String>,
    /// Response column (generic kind; defaults to the last non-label column).
    #[arg(long)]
    pub response_column: Option<String>,
    /// Treat the first line as data, not a header.
    #[arg(long)]
    pub no_header: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Sum,
    Maxmin,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Sum => Objective::Sum,
            ObjectiveArg::Maxmin => Objective::MaxMin,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "twoset",
    version,
    about = "Prediction-error analysis for data pooled from two sources"
)]
struct Cli {
    /// Worker threads (default: all cores). Results are identical for any
    /// thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-prediction error table for chosen predictor sets (no specific
    /// blocks), both directions per set.
    Compat {
        #[command(flatten)]
        data: DataArgs,
        /// Predictor sets: comma-separated names, semicolon-separated sets
        /// (e.g. "x1;x2;x1,x2"). Default: all subsets when 4 or fewer
        /// predictors.
        #[arg(long)]
        predictors: Option<String>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rank common-predictor sets by model-averaged cross-prediction error.
    Search {
        #[command(flatten)]
        data: DataArgs,
        /// Smallest common-set size to evaluate.
        #[arg(long, default_value_t = 1)]
        min_common: usize,
        /// Largest common-set size to evaluate.
        #[arg(long)]
        max_common: Option<usize>,
        #[arg(long, value_enum, default_value_t = ObjectiveArg::Sum)]
        objective: ObjectiveArg,
        /// Truncate the written results (computation is unaffected).
        #[arg(long)]
        top: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Posterior sampling for one model pair under the half-Cauchy prior.
    Mcmc {
        #[command(flatten)]
        data: DataArgs,
        /// Common predictors (comma-separated names).
        #[arg(long)]
        common: String,
        /// Predictors specific to dataset 0.
        #[arg(long)]
        specific0: Option<String>,
        /// Predictors specific to dataset 1.
        #[arg(long)]
        specific1: Option<String>,
        /// Let the intercept carry the random-coefficients perturbation in
        /// the error formulas.
        #[arg(long)]
        intercept_random: bool,
        #[arg(long, default_value_t = 20_000)]
        iters: usize,
        #[arg(long, default_value_t = 5_000)]
        burnin: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write every retained draw to this CSV file.
        #[arg(long)]
        dump_draws: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Compare the closed-form and MCMC estimation routes model by model.
    Compare {
        #[command(flatten)]
        data: DataArgs,
        /// Keep models with more than this many common predictors.
        #[arg(long, default_value_t = 7)]
        min_common: usize,
        #[arg(long, default_value_t = 20_000)]
        iters: usize,
        #[arg(long, default_value_t = 5_000)]
        burnin: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sample this many models from the family instead of all of them.
        #[arg(long)]
        subset: Option<usize>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Exhaustive subset ranking by marginal likelihood for one dataset.
    Mlsel {
        #[command(flatten)]
        data: DataArgs,
        /// Which dataset to rank (0 or 1).
        #[arg(long)]
        dataset: u8,
        /// Truncate the written ranking.
        #[arg(long)]
        top: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Verify the closed-form error formulas against brute-force simulation.
    Simulate {
        /// JSON file with {"configs": [...]} simulation settings.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

fn exit_code_for(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    if err.downcast_ref::<cmds::FormulaCheckFailed>().is_some() {
        return 4;
    }
    if let Some(core) = err.downcast_ref::<twoset_core::Error>() {
        use twoset_core::Error as E;
        return match core {
            E::Io { .. }
            | E::Csv(_)
            | E::NonNumericCell { .. }
            | E::RaggedRow { .. }
            | E::NonFiniteCell { .. } => 2,
            E::InvalidInput(_) => 1,
            E::EnumerationGuard { .. } => 3,
            E::ZeroVariance { .. }
            | E::RankDeficient { .. }
            | E::Singular { .. }
            | E::QuadratureNonConvergence { .. }
            | E::FingerprintMismatch
            | E::Mcmc { .. } => 4,
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 2;
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| UsageError(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Command::Compat {
            data,
            predictors,
            out_dir,
            seed,
        } => cmds::cmd_compat(data, predictors.as_deref(), out_dir, *seed),
        Command::Search {
            data,
            min_common,
            max_common,
            objective,
            top,
            seed,
            out_dir,
        } => cmds::cmd_search(
            data,
            *min_common,
            *max_common,
            (*objective).into(),
            *top,
            *seed,
            out_dir,
        ),
        Command::Mcmc {
            data,
            common,
            specific0,
            specific1,
            intercept_random,
            iters,
            burnin,
            seed,
            dump_draws,
            out_dir,
        } => cmds::cmd_mcmc(
            data,
            common,
            specific0.as_deref(),
            specific1.as_deref(),
            *intercept_random,
            *iters,
            *burnin,
            *seed,
            dump_draws.as_deref(),
            out_dir,
        ),
        Command::Compare {
            data,
            min_common,
            iters,
            burnin,
            seed,
            subset,
            out_dir,
        } => cmds::cmd_compare(data, *min_common, *iters, *burnin, *seed, *subset, out_dir),
        Command::Mlsel {
            data,
            dataset,
            top,
            seed,
            out_dir,
        } => cmds::cmd_mlsel(data, *dataset, *top, out_dir, *seed),
        Command::Simulate { config, out_dir } => cmds::cmd_simulate(config, out_dir),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version are not usage errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli) {
        // print the cause chain, skipping causes already embedded in the
        // parent message
        let mut message = format!("{err}");
        for cause in err.chain().skip(1) {
            let text = cause.to_string();
            if !message.contains(&text) {
                message.push_str(": ");
                message.push_str(&text);
            }
        }
        eprintln!("error: {message}");
        std::process::exit(exit_code_for(&err));
    }
}
