//! The `enk` command-line runner.
//!
//! ```text
//! enk <command> [--config FILE] [--key value | --key=value]...
//! ```
//!
//! Commands: `gen-data`, `train`, `eval`, `gradcheck`, `benchmark`,
//! `gradcam`. Every config key can be given as a flag; see [`config::KEYS`].
//! `ENK_THREADS` caps the worker count (0 or 1 runs single-threaded).
//! Results do not depend on the worker count.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use enk_core::nn::Executor;

use crate::config::Config;
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "enk", version, about = "Time-encoding convolution experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Config overrides as `--key value` or `--key=value`.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "OVERRIDES"
    )]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic epoch file.
    GenData(Common),
    /// Train a model and write its checkpoint, curves and metrics.
    Train(Common),
    /// Evaluate a checkpoint on a dataset.
    Eval(Common),
    /// Finite-difference check of every analytic gradient.
    Gradcheck(Common),
    /// Time naive, decomposed and standard convolution on the preset shapes.
    Benchmark(Common),
    /// Export Grad-CAM heat maps of org and enk checkpoints.
    Gradcam(Common),
}

/// Worker count from `ENK_THREADS`; unset means all available cores.
pub fn executor_from_env() -> Result<Executor, CliError> {
    let threads = match std::env::var("ENK_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("ENK_THREADS = {v:?} is not a count")))?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok(Executor::new(threads)?)
}

type Handler = fn(&mut commands::Run) -> Result<(), CliError>;

fn dispatch(command: Command) -> Result<(), CliError> {
    let (name, common, f): (&'static str, Common, Handler) = match command {
        Command::GenData(c) => ("gen-data", c, commands::gen_data),
        Command::Train(c) => ("train", c, commands::train),
        Command::Eval(c) => ("eval", c, commands::eval),
        Command::Gradcheck(c) => ("gradcheck", c, commands::gradcheck),
        Command::Benchmark(c) => ("benchmark", c, commands::benchmark),
        Command::Gradcam(c) => ("gradcam", c, commands::gradcam),
    };
    let mut cfg = Config::default();
    if let Some(path) = &common.config {
        cfg.load_file(path)?;
    }
    cfg.apply_flags(&common.overrides)?;
    let mut run = commands::Run::new(&cfg, name, executor_from_env()?);
    f(&mut run)
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("enk: {e}");
            e.exit_code()
        }
    }
}
