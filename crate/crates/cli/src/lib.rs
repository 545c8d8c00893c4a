//! The `xumx` command-line interface.
//!
//! Exit codes: 0 on success, 2 for usage, configuration or input errors, 3
//! when a run fails (training divergence, I/O failure).

pub mod commands;
pub mod config;
pub mod report;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<xumx_core::Error> for CliError {
    fn from(e: xumx_core::Error) -> Self {
        use xumx_core::Error as E;
        match e {
            E::InvalidArgument(_)
            | E::MissingFile(_)
            | E::SampleRateMismatch { .. }
            | E::WavParse { .. }
            | E::UnsupportedCodec(_)
            | E::Checkpoint(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "xumx",
    version,
    about = "Music source separation: train, separate, evaluate, ablate"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write model.ckpt and history.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Separate a WAV file, or every track in a directory, into stems.
    Separate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        outdir: PathBuf,
    },
    /// Score estimated stems against references.
    Eval {
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        ests: PathBuf,
        /// Per-frame CSV; the summary is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate a list of variants with a shared seed.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of C1..C7, P.
        #[arg(long)]
        variants: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, out, seed } => commands::train(&config, &out, seed),
        Command::Separate { model, input, outdir } => commands::separate(&model, &input, &outdir),
        Command::Eval { refs, ests, out } => commands::eval(&refs, &ests, &out),
        Command::Ablate {
            config,
            variants,
            out,
            seed,
        } => commands::ablate(&config, &variants, &out, seed),
    }
}
