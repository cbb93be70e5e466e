//! Command-line front end for `hdlogit`.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 separable data,
//! 4 probe or frontier failure, 1 anything else.

mod commands;
pub mod dataset;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::run;

/// Environment variable that overrides `--cache-dir`.
pub const CACHE_ENV: &str = "HDLOGIT_CACHE";

const SEPARATION_HELP: &str = "the data are linearly separable, so the logistic MLE does not exist. \
In high dimensions this happens with high probability once p/n is above the existence frontier \
for the signal strength at hand; reduce the number of covariates or add observations";

#[derive(Debug, Parser)]
#[command(
    name = "hdlogit",
    version,
    about = "High-dimensional logistic regression: simulation and adjusted inference"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Master seed; for `simulate` it replaces the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Directory for cached frontier curves.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
}

impl GlobalArgs {
    pub fn seed_or_zero(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// `HDLOGIT_CACHE`, then `--cache-dir`, then the system temp dir.
    pub fn cache_dir(&self) -> PathBuf {
        match std::env::var_os(CACHE_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self
                .cache_dir
                .clone()
                .unwrap_or_else(|| std::env::temp_dir().join("hdlogit-cache")),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a Monte-Carlo experiment described by a JSON config.
    Simulate { config: PathBuf },
    /// Build (or load from cache) the MLE existence frontier.
    Frontier {
        #[command(flatten)]
        frontier: FrontierArgs,
        /// Rebuild even when a cached curve exists.
        #[arg(long)]
        refresh: bool,
    },
    /// Fit, estimate the signal strength and report adjusted inference.
    Infer {
        data: PathBuf,
        #[command(flatten)]
        data_args: DataArgs,
        /// Confidence level of the intervals.
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// How the conditional standard deviations are estimated.
        #[arg(long, value_enum, default_value_t = TauArg::Rss)]
        tau: TauArg,
        /// Also compute rescaled likelihood-ratio p-values (one refit per
        /// coefficient).
        #[arg(long)]
        lrt: bool,
        /// Use this signal strength instead of probing for it.
        #[arg(long)]
        gamma_hat: Option<f64>,
        /// Random subsamples per ratio when probing.
        #[arg(long, default_value_t = 10)]
        resamples: usize,
        /// Ratios p/n' probed; defaults to p/n + 0.02, p/n + 0.04, … up to 0.5.
        #[arg(long, value_delimiter = ',')]
        probe_grid: Option<Vec<f64>>,
        #[command(flatten)]
        frontier: FrontierArgs,
    },
    /// Refit on subsamples of increasing p/n and record one coefficient.
    SubsampleStudy {
        data: PathBuf,
        #[command(flatten)]
        data_args: DataArgs,
        /// Covariate to follow, by header name or zero-based index.
        #[arg(long)]
        variable: String,
        /// Target ratios p/n', each at least the data's own p/n.
        #[arg(long, value_delimiter = ',', required = true)]
        kappas: Vec<f64>,
        /// Subsamples per ratio.
        #[arg(long = "B", default_value_t = 100)]
        b: usize,
    },
    /// Plain maximum-likelihood fit with classical standard errors.
    Fit {
        data: PathBuf,
        #[command(flatten)]
        data_args: DataArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Label column, by header name or zero-based index; the last column by
    /// default.
    #[arg(long)]
    pub label_col: Option<String>,
    /// Keep the covariates as read instead of centering them.
    #[arg(long)]
    pub no_center: bool,
}

#[derive(Debug, Clone, Args)]
pub struct FrontierArgs {
    /// Ratios at which the frontier is estimated.
    #[arg(long, value_delimiter = ',', default_values_t = default_frontier_grid())]
    pub kappa_grid: Vec<f64>,
    /// Sample size of each Monte-Carlo separability draw.
    #[arg(long = "frontier-n", alias = "n", default_value_t = 1000)]
    pub n: usize,
    /// Draws per separability probability.
    #[arg(long = "frontier-reps", alias = "reps", default_value_t = 200)]
    pub reps: usize,
}

/// `0.05, 0.10, …, 0.50`.
pub fn default_frontier_grid() -> Vec<f64> {
    (1..=10)
        .map(|k| k as f64 * 0.05)
        .map(|k| (k * 1e9).round() / 1e9)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TauArg {
    Rss,
    Ar1,
}

/// An error with the process exit code it maps to.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    /// Bad configuration or input data.
    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(2, message)
    }

    pub fn separable() -> Self {
        Self::new(3, SEPARATION_HELP)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<hdlogit::Error> for CliError {
    fn from(e: hdlogit::Error) -> Self {
        use hdlogit::logistic::FailureKind;
        use hdlogit::Error as E;
        match &e {
            E::Config(_) | E::InvalidParameter(_) | E::DimensionMismatch(_) | E::Json(_) => Self::usage(e.to_string()),
            E::SeparableData
            | E::NotConverged {
                kind: FailureKind::Separated | FailureKind::NormCapExceeded,
                ..
            } => Self::separable(),
            E::ProbeGridExhausted | E::Frontier(_) => Self::new(4, e.to_string()),
            _ => Self::new(1, e.to_string()),
        }
    }
}
