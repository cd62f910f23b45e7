//! `symdet` command implementations.

pub mod annotations;
pub mod commands;
pub mod run_config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use commands::{convert, detect, eval, synth, train};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<symdet::DetectorError> for CliError {
    fn from(e: symdet::DetectorError) -> Self {
        use symdet::DetectorError as E;
        match e {
            E::NonFinite(_) | E::NonFiniteGradient { .. } | E::Tensor(symdet::TensorError::NonFinite(_)) => {
                CliError::Numeric(e.to_string())
            }
            E::BadConfig(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "symdet", version, about = "Handwritten symbol detection with a toy Faster R-CNN")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rasterize a directory of InkML files into a labeled image dataset.
    Convert {
        #[arg(long)]
        input: std::path::PathBuf,
        #[arg(long)]
        out: std::path::PathBuf,
        #[arg(long)]
        config: Option<std::path::PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Put every image in the training split.
        #[arg(long)]
        no_split: bool,
    },
    /// Generate a synthetic box/cross/disc dataset.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: std::path::PathBuf,
        /// Number of trailing images placed in the validation split.
        #[arg(long, default_value_t = 0)]
        val: usize,
    },
    /// Train a detector on `<data>/train.jsonl`.
    Train {
        #[arg(long)]
        data: std::path::PathBuf,
        #[arg(long)]
        config: Option<std::path::PathBuf>,
        #[arg(long)]
        out: std::path::PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Detect symbols in a PGM image or every PGM in a directory.
    Detect {
        #[arg(long)]
        image: std::path::PathBuf,
        #[arg(long)]
        checkpoint: std::path::PathBuf,
        #[arg(long)]
        overlay: Option<std::path::PathBuf>,
        #[arg(long)]
        json: Option<std::path::PathBuf>,
    },
    /// Score detections against truth annotations.
    Eval {
        #[arg(long)]
        truth: std::path::PathBuf,
        #[arg(long)]
        detections: std::path::PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Records file; defaults to `report.csv` beside the detections.
        #[arg(long)]
        report: Option<std::path::PathBuf>,
        /// Use 11-point interpolated AP.
        #[arg(long)]
        eleven_point: bool,
    },
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Convert { input, out, config, seed, no_split } => {
            convert(&input, &out, config.as_deref(), seed, no_split)
        }
        Command::Synth { n, seed, out, val } => synth(n, seed, &out, val),
        Command::Train { data, config, out, seed } => train(&data, config.as_deref(), &out, seed),
        Command::Detect { image, checkpoint, overlay, json } => {
            detect(&image, &checkpoint, overlay.as_deref(), json.as_deref())
        }
        Command::Eval { truth, detections, iou, report, eleven_point } => {
            eval(&truth, &detections, iou, report.as_deref(), eleven_point)
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
