//! `symcorr` — command-line front end for the symbol-transition modeling
//! and error-correction pipeline.
//!
//! Nine subcommands cover the full experiment lifecycle: `schedule` and
//! `truth-matrices` construct the ground-truth channel description,
//! `verify-markov` runs the factorization diagnostic, `fit` / `check-fit`
//! produce and evaluate the transition-model artifact, `train-codebook` /
//! `codebook-metrics` handle the feature codebooks, and `simulate` / `sweep`
//! run the end-to-end receiver.
//!
//! Exit codes: 0 on success, 1 for validation problems (bad flags, bad
//! config, missing or mismatched artifacts), 2 for numerical failures.
//! All outputs are written atomically with a `<output>.manifest.json`
//! recording the resolved settings, seeds, and content hashes; identical
//! config and seed reproduce identical bytes at any `--threads` value.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Config;

#[derive(Parser)]
#[command(
    name = "symcorr",
    version,
    about = "Symbol-transition modeling, codebook training, and reverse-corruption error correction",
    propagate_version = true
)]
struct Cli {
    /// Flat key=value config file; command-line flags override its entries
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for outputs; overrides SYMCORR_OUT_DIR and config `out-dir`
    /// [default: .]
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Cap the worker-thread count; never changes results, only wall time
    /// [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Emit the corruption schedule (per-step SNR and variance) as CSV
    Schedule(commands::ScheduleArgs),
    /// Compute ground-truth cumulative transition matrices at chosen steps
    TruthMatrices(commands::TruthMatricesArgs),
    /// Measure how far the detected-symbol process is from Markov
    VerifyMarkov(commands::VerifyMarkovArgs),
    /// Fit the shared-eigenbasis transition model to target matrices
    Fit(commands::FitArgs),
    /// Evaluate a fit artifact against targets (NMSE vs the product-form
    /// heuristic)
    CheckFit(commands::CheckFitArgs),
    /// Train a grid-regularized vector-quantization codebook
    TrainCodebook(commands::TrainCodebookArgs),
    /// Report topology metrics of a codebook artifact
    CodebookMetrics(commands::CodebookMetricsArgs),
    /// Run the end-to-end pipeline at one SNR point
    Simulate(commands::SimulateArgs),
    /// Run the end-to-end pipeline over an SNR grid
    Sweep(commands::SweepArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here; keep their exit code 0 and
            // route genuine usage errors to the validation exit code.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(1);
        }
        if let Err(msg) = symcorr::exec::configure_threads(n) {
            eprintln!("error: cannot configure {n} worker threads: {msg}");
            return ExitCode::from(2);
        }
    }

    let run = || -> symcorr::Result<()> {
        let cfg = Config::load(cli.config.as_deref())?;
        let out_dir = cli.out_dir.as_deref();
        match &cli.cmd {
            Cmd::Schedule(a) => commands::run_schedule(a, &cfg, out_dir),
            Cmd::TruthMatrices(a) => commands::run_truth_matrices(a, &cfg, out_dir),
            Cmd::VerifyMarkov(a) => commands::run_verify_markov(a, &cfg, out_dir),
            Cmd::Fit(a) => commands::run_fit(a, &cfg, out_dir),
            Cmd::CheckFit(a) => commands::run_check_fit(a, &cfg, out_dir),
            Cmd::TrainCodebook(a) => commands::run_train_codebook(a, &cfg, out_dir),
            Cmd::CodebookMetrics(a) => commands::run_codebook_metrics(a, &cfg, out_dir),
            Cmd::Simulate(a) => commands::run_simulate(a, &cfg, out_dir),
            Cmd::Sweep(a) => commands::run_sweep(a, &cfg, out_dir),
        }
    };

    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
