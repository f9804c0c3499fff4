//! `rreml` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit status categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Usage = 1,
    Data = 2,
    Infra = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Exit,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { kind: Exit::Usage, message: message.into() }
    }

    pub fn from_usage(e: rreml::Error) -> Self {
        Self::usage(e.to_string())
    }

    /// Errors raised while reading or fitting user data. I/O failures stay
    /// infrastructure errors.
    pub fn data(e: rreml::Error) -> Self {
        match e {
            rreml::Error::Io(io) => Self::infra(io),
            other => Self { kind: Exit::Data, message: other.to_string() },
        }
    }

    pub fn infra(e: impl std::fmt::Display) -> Self {
        Self { kind: Exit::Infra, message: e.to_string() }
    }
}

/// Options shared by every subcommand. Each may also come from `--config`.
#[derive(Debug, Clone, Args, Default)]
pub struct CommonArgs {
    /// `key = value` file (keys: seed, parallelism, out_dir, reps, rho_tol,
    /// variance_tol, max_evals, starts, polish_cycles). Flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed [default: 1].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it [default: 1].
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Directory for every file written [default: .].
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Replicates per setting, replacing the catalog value.
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    /// Distance from ±1 that still counts as a boundary correlation [default: 1e-6].
    #[arg(long, global = true)]
    pub rho_tol: Option<f64>,
    /// Variance below this multiple of the error variance counts as zero [default: 1e-10].
    #[arg(long, global = true)]
    pub variance_tol: Option<f64>,
    /// Objective evaluations per optimizer run [default: 4000].
    #[arg(long, global = true)]
    pub max_evals: Option<usize>,
    /// Optimizer starts, 1 to 5 [default: 5].
    #[arg(long, global = true)]
    pub starts: Option<usize>,
    /// Coordinate polishing cycles after each optimizer run [default: 60].
    #[arg(long, global = true)]
    pub polish_cycles: Option<usize>,
}

#[derive(Debug, Parser)]
#[command(name = "rreml", version, about = "REML fits of random-regression models and boundary-estimate experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VarianceModeArg {
    /// σ²_c = σ²_s = 1, σ²_e = r.
    FixRandomEffects,
    /// σ²_e = 1, σ²_c = σ²_s = 1/r.
    FixError,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate both boundary predictors at one (N, s, rho, r).
    Predictor {
        #[arg(long = "N")]
        n: usize,
        #[arg(long = "s")]
        s: usize,
        #[arg(long, allow_negative_numbers = true)]
        rho: f64,
        #[arg(long)]
        r: f64,
        /// Use the formula as typeset instead of the corrected form.
        #[arg(long)]
        as_printed: bool,
    },
    /// Simulate a balanced dataset and write it as CSV.
    Simulate {
        #[arg(long = "N")]
        n: usize,
        #[arg(long = "s")]
        s: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma2_e: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma2_c: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma2_s: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        rho: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        b0: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        b1: f64,
        #[arg(long, default_value = "dataset.csv")]
        output: String,
    },
    /// Fit a dataset CSV (`cluster,x,y`) and write the fit as JSON.
    ///
    /// Balanced data go to the sufficient-statistic engine unless --general or
    /// --fixed is given.
    Fit {
        input: PathBuf,
        /// Extra fixed-effect columns, comma separated.
        #[arg(long, value_delimiter = ',')]
        fixed: Vec<String>,
        /// Force the general engine.
        #[arg(long)]
        general: bool,
        #[arg(long, default_value = "fit.json")]
        output: String,
    },
    /// Run a catalogued experiment (A to G), the factorial, or the predictor sweep.
    Experiment {
        /// A, B, C, D, E, F, G, factorial or predictor-sweep.
        name: String,
        /// Fraction of each factorial grid to keep, in (0, 1].
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Draws for the predictor sweep.
        #[arg(long, default_value_t = 1000)]
        draws: usize,
        #[arg(long, value_enum, default_value_t = VarianceModeArg::FixRandomEffects)]
        variance_mode: VarianceModeArg,
    },
    /// Residual-inflation sweep on the health-plan data.
    Invivo {
        /// CSV with columns state,premium,families,exp_per_admission,new_england.
        #[arg(long, conflicts_with = "surrogate", required_unless_present = "surrogate")]
        data: Option<PathBuf>,
        /// Use the bundled synthetic stand-in (seeded by --seed).
        #[arg(long)]
        surrogate: bool,
        #[arg(long, default_value_t = 1.0)]
        phi_start: f64,
        #[arg(long, default_value_t = 2.5)]
        phi_end: f64,
        #[arg(long, default_value_t = 0.1)]
        phi_step: f64,
        #[arg(long, default_value = "invivo.csv")]
        output: String,
    },
    /// Main-effect plus two-way ANOVA of a numeric CSV.
    Anova {
        input: PathBuf,
        /// Categorical factors, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        factors: Vec<String>,
        #[arg(long)]
        response: String,
        /// Also print least-squares means of these factors.
        #[arg(long, value_delimiter = ',')]
        ls_means: Vec<String>,
        #[arg(long, default_value = "anova.csv")]
        output: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(Exit::Usage as u8),
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.kind as u8)
        }
    }
}
