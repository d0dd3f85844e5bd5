//! `smallgain` command-line front end.
//!
//! Exit codes: 0 when the checked property holds or the requested
//! reproduction succeeded, 2 when it is violated or refuted, 1 on usage and
//! configuration errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Analysis(#[from] smallgain::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn config(path: impl Into<String>, message: impl ToString) -> Self {
        Self::Config { path: path.into(), message: message.to_string() }
    }

    fn exit_code(&self) -> u8 {
        use smallgain::Error as E;
        match self {
            Self::Analysis(E::SpectralRadiusTooLarge { .. } | E::NotHurwitz { .. }) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "smallgain", version, about = "Small-gain analysis for networks of ISS subsystems")]
pub struct Cli {
    /// Project configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory receiving the artifacts.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the small-gain conditions of the gain matrix or linear blocks.
    Check,
    /// Iterate s ↦ Γ(s) and classify the orbit.
    Iterate {
        /// Start vector, comma separated; defaults to all ones.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        s0: Option<Vec<f64>>,
        #[arg(long)]
        kmax: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Build the weighted-max Lyapunov function and check the Ω cover.
    Lyapunov {
        /// Also verify decrease along simulated trajectories.
        #[arg(long)]
        check_decrease: bool,
    },
    /// Simulate the ODE system, or tabulate asymptotic gains with --c.
    Simulate {
        #[arg(long = "T")]
        t_end: Option<f64>,
        #[arg(long)]
        h: Option<f64>,
        /// Input signal: "0.5", "pw:0=1;2=0" or expressions in t separated by ';'.
        #[arg(long, allow_hyphen_values = true)]
        u: Option<String>,
        /// Levels c with u ≡ c·e^{−c} and x0 = (c, …, c); a single c probes c/2, c, 3c/2.
        #[arg(long, value_delimiter = ',')]
        c: Option<Vec<f64>>,
    },
    /// Certify a linear interconnection through decay envelopes.
    Linsys {
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Reproduce one of the built-in counterexamples.
    Counterexample {
        #[arg(long, value_enum, default_value_t = Variant::GammaK)]
        variant: Variant,
        /// Number of iterations for gamma-k.
        #[arg(long, default_value_t = 2000)]
        k: usize,
        /// Levels c for ex42.
        #[arg(long, value_delimiter = ',')]
        c: Option<Vec<f64>>,
    },
    /// Merge the JSON artifacts in the output directory.
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    GammaK,
    Ex42,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
