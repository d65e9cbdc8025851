//! The `binnet` command line: train, evaluate and benchmark.
//!
//! Exit codes: 0 on success, 1 on usage, input or I/O errors, 2 when
//! training diverges.

use std::ffi::OsString;

use clap::{Parser, Subcommand};

pub mod bench;
pub mod config;
pub mod datasets;
pub mod eval;
pub mod manifest;
pub mod metrics;
pub mod train;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;

/// Caps the worker pool when set.
pub const THREADS_ENV: &str = "BINNET_THREADS";

#[derive(Debug, Parser)]
#[command(name = "binnet", version, about = "Train, evaluate and benchmark binary-weight networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write metrics.csv, checkpoint.bin and manifest.json.
    Train(train::TrainArgs),
    /// Evaluate a checkpoint on the validation split.
    Eval(eval::EvalArgs),
    /// Time the dense and convolution kernels.
    Bench(bench::BenchArgs),
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FAILURE } else { EXIT_OK };
        }
    };
    let command_line = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join(" ");
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Train(args) => train::run(args, &command_line),
        Command::Eval(args) => eval::run(args),
        Command::Bench(args) => bench::run(args, &command_line),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &anyhow::Error) -> i32 {
    let diverged = e
        .chain()
        .any(|c| matches!(c.downcast_ref::<binnet::Error>(), Some(binnet::Error::Divergence { .. })));
    if diverged {
        EXIT_DIVERGED
    } else {
        EXIT_FAILURE
    }
}

/// Reads the thread cap from [`THREADS_ENV`].
pub fn thread_cap() -> anyhow::Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => anyhow::bail!("{THREADS_ENV}: {e}"),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => anyhow::bail!("{THREADS_ENV} must be a positive integer, got {v:?}"),
        },
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Some(n) = thread_cap()? {
        // A second call in the same process finds the pool already built.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}
