//! The `ddk` command-line driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 training
//! instability. `DDK_THREADS` caps the worker pool; results do not depend
//! on it.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ddk_core::DdkError;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
    Instability { step: usize, loss: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Instability { .. } => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
            CliError::Instability { step, loss } => {
                write!(f, "training halted: non-finite loss or update at step {step} (loss = {loss})")
            }
        }
    }
}

impl From<DdkError> for CliError {
    fn from(e: DdkError) -> Self {
        match e {
            DdkError::Instability { step, loss } => CliError::Instability { step, loss },
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "ddk", version, about = "Denoising diffusion lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// Run config file (`key = value` lines).
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a config entry; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `io.out_dir`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Overrides `io.checkpoint`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a denoiser; writes checkpoints and the training history.
    Train(RunArgs),
    /// Draw samples with ancestral sampling.
    Sample(RunArgs),
    /// Per-term variational bound on held-out data.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Use a closed-form denoiser instead of a checkpoint
        /// (`point_mass` or `standard_normal`).
        #[arg(long)]
        oracle: Option<String>,
    },
    /// Progressive-coding rate and distortion.
    RdCurve(RunArgs),
    /// Snapshots of the x0 estimate during sampling.
    Progressive(RunArgs),
    /// Decode interpolated latents of two datapoints.
    Interpolate(RunArgs),
    /// Masking-diffusion bound vs autoregressive likelihood.
    ArCheck(RunArgs),
    /// Run the fast invariant suite.
    Check {
        /// Corrupt a component to confirm the suite catches it (`schedule`).
        #[arg(long)]
        inject_fault: Option<String>,
    },
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("DDK_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Usage(format!("DDK_THREADS must be a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(CliError::Usage("DDK_THREADS must be positive".into()));
        }
        // A pool may already exist when called in-process more than once.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = configure_threads().and_then(|_| commands::dispatch(cli.command));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("usage: ddk <command> --config <FILE> [--set KEY=VALUE]...; see `ddk --help`");
            }
            e.exit_code()
        }
    }
}
