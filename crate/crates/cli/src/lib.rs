//! Command-line front end for the local-vol Monte Carlo engine.
//!
//! Subcommands read a JSON config (see [`config::ConfigFile`]), run one of
//! the core entry points and write JSON/CSV outputs plus a manifest sidecar
//! that re-ingests as a config.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod csvio;
pub mod output;

pub use config::{BackendArg, ConfigFile, Overrides, PrecisionArg, SchemeArg};

/// Failure classes, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or config (exit 2).
    #[error("{0}")]
    Usage(String),
    /// Surface data that fails to load or validate (exit 3).
    #[error("{0}")]
    Data(String),
    /// Adjoint and bump estimates disagree beyond tolerance (exit 4).
    #[error("{0}")]
    Tolerance(String),
    /// Output could not be written (exit 1).
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Tolerance(_) => 4,
        }
    }
}

impl From<dupire_aad_core::Error> for CliError {
    fn from(e: dupire_aad_core::Error) -> Self {
        use dupire_aad_core::Error as E;
        match e {
            E::Surface(_) | E::Domain(_) => CliError::Data(e.to_string()),
            E::InvalidConfig(_) | E::NodeOutOfRange { .. } => CliError::Usage(e.to_string()),
            E::TapeMismatch(_) => CliError::Io(format!("internal error: {e}")),
        }
    }
}

impl From<dupire_aad_core::SurfaceError> for CliError {
    fn from(e: dupire_aad_core::SurfaceError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dupire-aad",
    version,
    about = "Local-vol Monte Carlo pricing with adjoint vega surfaces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo price with standard error.
    Price(Common),
    /// Price, delta and the full vega surface by adjoint differentiation.
    Greeks {
        #[command(flatten)]
        common: Common,
        /// Emit the vega grid in the surface-file layout instead of long format.
        #[arg(long)]
        wide: bool,
    },
    /// Compare adjoint vegas with bump-and-revalue on common random numbers.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Absolute vol bump.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        tol_rel: Option<f64>,
        #[arg(long)]
        tol_abs: Option<f64>,
        /// Bump every stride-th node along each axis.
        #[arg(long)]
        stride: Option<usize>,
        /// Allow grids with more than 400 nodes.
        #[arg(long)]
        force: bool,
    },
    /// Time price and greeks across interpolation backends and precisions.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long, value_enum, value_delimiter = ',')]
        ops: Vec<commands::BenchOp>,
        #[arg(long, value_enum, value_delimiter = ',')]
        backends: Vec<BackendArg>,
        #[arg(long, value_enum, value_delimiter = ',')]
        precisions: Vec<PrecisionArg>,
    },
    /// Write a synthetic smile surface as a tab-separated file.
    GenSurface(commands::GenSurfaceArgs),
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Price(common) => commands::price(&common),
        Command::Greeks { common, wide } => commands::greeks(&common, wide),
        Command::Validate {
            common,
            eps,
            tol_rel,
            tol_abs,
            stride,
            force,
        } => commands::validate(
            &common,
            &commands::ValidateOverrides {
                eps,
                tol_rel,
                tol_abs,
                stride,
                force,
            },
        ),
        Command::Bench {
            common,
            repeats,
            ops,
            backends,
            precisions,
        } => commands::bench(&common, repeats, &ops, &backends, &precisions),
        Command::GenSurface(args) => commands::gen_surface(&args),
    }
}
