//! Command-line experiments for same-class neighbor penalization: data
//! generation, training, evaluation, gradient checks, the window-size sweep
//! and the loss ablation benchmark.
//!
//! Every command resolves its flags into a [`spec::RunSpec`], writes it as
//! `runspec.json`, and executes it; `scnp run --config runspec.json` repeats
//! a run exactly.

pub mod args;
pub mod commands;
pub mod experiment;
pub mod spec;

use std::ffi::OsString;

use anyhow::{Context, Result};
use clap::Parser;

use crate::args::Cli;
use crate::commands::GradcheckFailed;
use crate::spec::RunSpec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Environment variable overriding the number of worker threads.
pub const THREADS_ENV: &str = "SCNP_THREADS";

/// Exit code for a failed run: numerical failures (non-finite loss, failed
/// gradient check) are told apart from everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<GradcheckFailed>().is_some()
            || matches!(cause.downcast_ref::<scnp_core::Error>(), Some(scnp_core::Error::NonFinite { .. }))
        {
            return EXIT_NUMERICAL;
        }
    }
    EXIT_INVALID
}

pub fn worker_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
            anyhow::ensure!(n > 0, "{THREADS_ENV} must be a positive integer, got {v:?}");
            Ok(n)
        }
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Writes `runspec.json` and runs the spec on a pool of [`worker_count`]
/// threads.
pub fn execute(spec: &RunSpec) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count()?)
        .build()
        .context("starting worker threads")?;
    spec.write()?;
    pool.install(|| match spec {
        RunSpec::Generate(s) => commands::generate(s),
        RunSpec::Train(s) => commands::train_model(s),
        RunSpec::Eval(s) => commands::eval(s),
        RunSpec::Gradcheck(s) => commands::gradcheck_all(s),
        RunSpec::Sweep(s) => experiment::sweep(s),
        RunSpec::Benchmark(s) => experiment::benchmark(s),
    })
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let result = cli.command.into_spec().and_then(|spec| execute(&spec));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
