//! Implementations of the nine subcommands.
//!
//! Conventions shared by all of them:
//!
//! * settings resolve as flag > config file (`<cmd>.<key>`, then `<key>`) >
//!   built-in default, with the defaults shown in `--help`;
//! * the primary output lands in the output directory (`--out-dir`, else
//!   `SYMCORR_OUT_DIR`, else config `out-dir`, else `.`), written
//!   atomically, with a `<output>.manifest.json` beside it;
//! * everything stochastic flows from `--seed`, and re-running a command
//!   with the same inputs reproduces the outputs byte-for-byte at any
//!   `--threads` value.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use symcorr::artifact::{self, CodebookArtifact, FitArtifact};
use symcorr::codebook::{
    estimate_prior, topology_metrics, train_som_vq, usage_histogram, zipf_weights, Codebook,
    FeatureSource, TrainConfig,
};
use symcorr::fit::{self, FitConfig};
use symcorr::schedule::{build_schedule, NoiseSchedule, ScheduleParams};
use symcorr::simulator::{self, Pipeline, SimPoint};
use symcorr::truth::{self, TruthTransitionSet};
use symcorr::{Constellation, Error, Result};

use crate::config::{Config, Scope};
use crate::manifest::{write_atomic, RunManifest};

pub const TRUTH_FORMAT: &str = "symcorr.truth.v1";

/// Per-command execution context: scoped config plus the resolved output
/// directory.
pub struct Ctx<'a> {
    pub scope: Scope<'a>,
    pub out_dir: PathBuf,
}

impl<'a> Ctx<'a> {
    pub fn new(cfg: &'a Config, cmd: &'static str, out_dir_flag: Option<&Path>) -> Result<Self> {
        let scope = Scope::new(cfg, cmd);
        let out_dir = out_dir_flag
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os("SYMCORR_OUT_DIR").map(PathBuf::from))
            .or_else(|| scope.opt_path("out-dir", None))
            .unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&out_dir)
            .map_err(|e| Error::InvalidArgument(format!("out-dir {}: {e}", out_dir.display())))?;
        Ok(Self { scope, out_dir })
    }

    /// Resolve the primary output path: `--out` (or config `out`), with
    /// relative paths placed inside the output directory.
    pub fn out_path(&self, flag: Option<&Path>, default_name: &str) -> PathBuf {
        let chosen = self
            .scope
            .opt_path("out", flag)
            .unwrap_or_else(|| PathBuf::from(default_name));
        if chosen.is_absolute() {
            chosen
        } else {
            self.out_dir.join(chosen)
        }
    }
}

fn named_load<T>(flag: &str, path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::InvalidArgument(format!("{flag} {}: {e}", path.display())))
}

fn parse_list<T: std::str::FromStr>(what: &str, raw: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for tok in raw.split(',') {
        let tok = tok.trim();
        if tok.is_empty() {
            continue;
        }
        out.push(tok.parse().map_err(|_| {
            Error::InvalidArgument(format!("{what}: cannot parse `{tok}` in list `{raw}`"))
        })?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Shared flag groups
// ---------------------------------------------------------------------------

/// Noise-schedule shape parameters, shared by the commands that construct a
/// schedule from scratch.
#[derive(Debug, Args)]
pub struct ScheduleOpts {
    /// Number of corruption steps [default: 100]
    #[arg(long)]
    pub t_steps: Option<usize>,
    /// Variance ramp floor [default: 0.025]
    #[arg(long)]
    pub nu_start: Option<f64>,
    /// Variance ramp ceiling [default: 1.25]
    #[arg(long)]
    pub nu_end: Option<f64>,
    /// Sigmoid midpoint in normalized time [default: 0.45]
    #[arg(long)]
    pub xi1: Option<f64>,
    /// Sigmoid steepness [default: 6.5]
    #[arg(long)]
    pub xi2: Option<f64>,
    /// Mean symbol power [default: 1]
    #[arg(long)]
    pub power: Option<f64>,
    /// Per-step SNR cap in dB [default: 20]
    #[arg(long)]
    pub eta_cap_db: Option<f64>,
}

fn resolve_schedule(scope: &Scope, o: &ScheduleOpts) -> Result<(ScheduleParams, NoiseSchedule)> {
    let d = ScheduleParams::default();
    let params = ScheduleParams {
        t_steps: scope.usize("t-steps", o.t_steps, d.t_steps)?,
        nu_start: scope.f64("nu-start", o.nu_start, d.nu_start)?,
        nu_end: scope.f64("nu-end", o.nu_end, d.nu_end)?,
        xi1: scope.f64("xi1", o.xi1, d.xi1)?,
        xi2: scope.f64("xi2", o.xi2, d.xi2)?,
        power: scope.f64("power", o.power, d.power)?,
        eta_cap_db: scope.f64("eta-cap-db", o.eta_cap_db, d.eta_cap_db)?,
    };
    let sch = build_schedule(params.clone())?;
    Ok((params, sch))
}

fn record_schedule(man: &mut RunManifest, p: &ScheduleParams) {
    man.setting("t-steps", p.t_steps);
    man.setting("nu-start", p.nu_start);
    man.setting("nu-end", p.nu_end);
    man.setting("xi1", p.xi1);
    man.setting("xi2", p.xi2);
    man.setting("power", p.power);
    man.setting("eta-cap-db", p.eta_cap_db);
}

// ---------------------------------------------------------------------------
// schedule
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[command(flatten)]
    pub sched: ScheduleOpts,
    /// Output CSV path, relative to the output directory [default: schedule.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_schedule(a: &ScheduleArgs, cfg: &Config, out_dir: Option<&Path>) -> Result<()> {
    let ctx = Ctx::new(cfg, "schedule", out_dir)?;
    let (params, sch) = resolve_schedule(&ctx.scope, &a.sched)?;

    let mut csv = String::from("k,time,eta_db,cum_var,step_var\n");
    csv.push_str("0,0,,0,\n");
    for k in 1..=sch.t_steps() {
        csv.push_str(&format!(
            "{k},{},{},{},{}\n",
            sch.time(k),
            sch.eta_db(k),
            sch.cum_var(k),
            sch.step_var(k)
        ));
    }
    let out = ctx.out_path(a.out.as_deref(), "schedule.csv");
    write_atomic(&out, csv.as_bytes())?;

    let mut man = RunManifest::new("schedule");
    record_schedule(&mut man, &params);
    man.setting("out", out.display());
    man.output(&out)?;
    man.write_beside(&out)?;

    let (lo, hi) = sch.coverage_db();
    println!(
        "schedule: T={}, per-step SNR covers [{lo:.2}, {hi:.2}] dB, terminal variance {:.4}",
        sch.t_steps(),
        sch.cum_var(sch.t_steps())
    );
    println!("wrote {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// truth-matrices
// ---------------------------------------------------------------------------

/// Serialized cumulative transition matrices at selected steps; the fit
/// commands consume this file as their target set.
#[derive(Debug, Serialize, Deserialize)]
pub struct TruthMatricesFile {
    pub format: String,
    pub constellation_key: String,
    pub schedule: ScheduleParams,
    pub steps: Vec<usize>,
    /// Cumulative noise variance at each step.
    pub variances: Vec<f64>,
    /// "analytic" or "mc".
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples_per_symbol: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Row-major matrices, one per step.
    pub matrices: Vec<Vec<Vec<f64>>>,
}

impl TruthMatricesFile {
    pub fn load(path: &Path) -> Result<Self> {
        let file: Self = artifact::load_json(path)?;
        if file.format != TRUTH_FORMAT {
            return Err(Error::ArtifactMismatch(format!(
                "expected format {TRUTH_FORMAT}, found {}",
                file.format
            )));
        }
        let n = file.steps.len();
        if file.matrices.len() != n || file.variances.len() != n || n == 0 {
            return Err(Error::ArtifactMismatch(
                "steps, variances, and matrices must be non-empty and parallel".into(),
            ));
        }
        let c = file.constellation()?;
        for rows in &file.matrices {
            let m = artifact::rows_to_matrix(rows)?;
            if m.nrows() != c.order() || m.ncols() != c.order() {
                return Err(Error::ArtifactMismatch(format!(
                    "matrix is {}x{} but the constellation has {} symbols",
                    m.nrows(),
                    m.ncols(),
                    c.order()
                )));
            }
        }
        Ok(file)
    }

    /// Reconstruct the constellation from the matrix order and check it
    /// against the recorded content key.
    pub fn constellation(&self) -> Result<Constellation> {
        let order = self.matrices.first().map(|m| m.len()).unwrap_or(0);
        let c = Constellation::square_qam(order)?;
        if c.content_key() != self.constellation_key {
            return Err(Error::ArtifactMismatch(format!(
                "constellation key {} does not match a {}-point square grid",
                self.constellation_key, order
            )));
        }
        Ok(c)
    }

    pub fn matrices(&self) -> Result<Vec<symcorr::nalgebra::DMatrix<f64>>> {
        self.matrices.iter().map(|r| artifact::rows_to_matrix(r)).collect()
    }
}

#[derive(Debug, Args)]
pub struct TruthMatricesArgs {
    #[command(flatten)]
    pub sched: ScheduleOpts,
    /// Constellation size (square grids only) [default: 16]
    #[arg(long)]
    pub order: Option<usize>,
    /// Comma-separated step indices [default: 2,4,9,20,40,65,84,94,98,100]
    #[arg(long)]
    pub steps: Option<String>,
    /// Matrix construction: "analytic" or "mc" [default: analytic]
    #[arg(long)]
    pub method: Option<String>,
    /// Trajectories per symbol for --method mc [default: 1000000]
    #[arg(long)]
    pub samples_per_symbol: Option<u64>,
    /// RNG seed; required for --method mc
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output JSON path [default: truth_matrices.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_truth_matrices(a: &TruthMatricesArgs, cfg: &Config, out_dir: Option<&Path>) -> Result<()> {
    let ctx = Ctx::new(cfg, "truth-matrices", out_dir)?;
    let (params, sch) = resolve_schedule(&ctx.scope, &a.sched)?;
    let order = ctx.scope.usize("order", a.order, 16)?;
    let c = Constellation::square_qam(order)?;
    let steps: Vec<usize> = parse_list(
        "steps",
        &ctx.scope
            .string("steps", a.steps.as_deref(), "2,4,9,20,40,65,84,94,98,100"),
    )?;
    if steps.is_empty() {
        return Err(Error::InvalidArgument("steps: list is empty".into()));
    }
    let method = ctx.scope.string("method", a.method.as_deref(), "analytic");

    let mut man = RunManifest::new("truth-matrices");
    let (matrices, variances, samples, seed) = match method.as_str() {
        "analytic" => {
            let set = TruthTransitionSet::analytic(&c, &sch, &steps)?;
            (set.matrices, set.variances, None, None)
        }
        "mc" => {
            let samples = ctx
                .scope
                .u64("samples-per-symbol", a.samples_per_symbol, 1_000_000)?;
            let seed = ctx.scope.opt_u64("seed", a.seed)?.ok_or_else(|| {
                Error::InvalidArgument("seed: required for --method mc".into())
            })?;
            let prior = vec![1.0 / order as f64; order];
            let mut matrices = Vec::with_capacity(steps.len());
            let mut variances = Vec::with_capacity(steps.len());
            for (i, &k) in steps.iter().enumerate() {
                let mc = truth::region_to_region_matrix(
                    &c,
                    &sch,
                    0,
                    k,
                    &prior,
                    samples,
                    seed.wrapping_add(i as u64),
                )?;
                matrices.push(mc.matrix);
                variances.push(sch.cum_var(k));
            }
            man.seed(seed);
            (matrices, variances, Some(samples), Some(seed))
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "method: expected `analytic` or `mc`, got `{other}`"
            )))
        }
    };

    let file = TruthMatricesFile {
        format: TRUTH_FORMAT.into(),
        constellation_key: c.content_key(),
        schedule: params.clone(),
        steps: steps.clone(),
        variances,
        method: method.clone(),
        samples_per_symbol: samples,
        seed,
        matrices: matrices.iter().map(artifact::matrix_to_rows).collect(),
    };
    let out = ctx.out_path(a.out.as_deref(), "truth_matrices.json");
    save_json_atomic(&out, &file)?;

    record_schedule(&mut man, &params);
    man.setting("order", order);
    man.setting("steps", steps.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","));
    man.setting("method", &method);
    if let Some(s) = samples {
        man.setting("samples-per-symbol", s);
    }
    man.setting("out", out.display());
    man.output(&out)?;
    man.write_beside(&out)?;

    println!(
        "truth-matrices: {} cumulative {}x{} kernels at steps {:?} ({method})",
        file.steps.len(),
        order,
        order,
        file.steps
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn save_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

// ---------------------------------------------------------------------------
// verify-markov
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct VerifyMarkovArgs {
    #[command(flatten)]
    pub sched: ScheduleOpts,
    /// Constellation size [default: 16]
    #[arg(long)]
    pub order: Option<usize>,
    /// Earlier step of the factorization test [default: 9]
    #[arg(long)]
    pub k1: Option<usize>,
    /// Later step of the factorization test [default: 20]
    #[arg(long)]
    pub k2: Option<usize>,
    /// Monte Carlo trajectories per symbol [default: 1000000]
    #[arg(long)]
    pub samples_per_symbol: Option<u64>,
    /// Symbol prior: "uniform" or "zipf" [default: uniform]
    #[arg(long)]
    pub prior: Option<String>,
    /// Zipf exponent when --prior zipf [default: 1]
    #[arg(long)]
    pub zipf_s: Option<f64>,
    /// RNG seed (required)
    #[arg(long, required = true)]
    pub seed: u64,
    /// Output JSON path [default: verify_markov.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_verify_markov(a: &VerifyMarkovArgs, cfg: &Config, out_dir: Option<&Path>) -> Result<()> {
    let ctx = Ctx::new(cfg, "verify-markov", out_dir)?;
    let (params, sch) = resolve_schedule(&ctx.scope, &a.sched)?;
    let order = ctx.scope.usize("order", a.order, 16)?;
    let c = Constellation::square_qam(order)?;
    let k1 = ctx.scope.usize("k1", a.k1, 9)?;
    let k2 = ctx.scope.usize("k2", a.k2, 20)?;
    let samples = ctx
        .scope
        .u64("samples-per-symbol", a.samples_per_symbol, 1_000_000)?;
    let prior_kind = ctx.scope.string("prior", a.prior.as_deref(), "uniform");
    let prior = match prior_kind.as_str() {
        "uniform" => vec![1.0 / order as f64; order],
        "zipf" => zipf_weights(order, ctx.scope.f64("zipf-s", a.zipf_s, 1.0)?),
        other => {
            return Err(Error::InvalidArgument(format!(
                "prior: expected `uniform` or `zipf`, got `{other}`"
            )))
        }
    };

    let v = truth::markov_violation(&c, &sch, k1, k2, &prior, samples, a.seed)?;

    let out = ctx.out_path(a.out.as_deref(), "verify_markov.json");
    save_json_atomic(&out, &v)?;

    let mut man = RunManifest::new("verify-markov");
    record_schedule(&mut man, &params);
    man.setting("order", order);
    man.setting("k1", k1);
    man.setting("k2", k2);
    man.setting("samples-per-symbol", samples);
    man.setting("prior", &prior_kind);
    man.setting("out", out.display());
    man.seed(a.seed);
    man.output(&out)?;
    man.write_beside(&out)?;

    println!(
        "factorization error e = {:.4} for steps ({k1}, {k2}) at {samples} trajectories/symbol",
        v.e
    );
    println!(
        "two-run fluctuation estimate = {:.2e} (second run e = {:.4}); e / fluctuation = {:.0}",
        v.fluctuation,
        v.e_second_run,
        v.e / v.fluctuation.max(f64::MIN_POSITIVE)
    );
    println!("wrote {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Target matrices produced by truth-matrices (required)
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Weight of the negative-entry penalty [default: 10]
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// Weight of the negative-eigenvalue penalty [default: 10]
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Adam learning rate [default: 0.01]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Optimization budget [default: 20000]
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Early-stop window in iterations; 0 disables [default: 200]
    #[arg(long)]
    pub plateau_window: Option<usize>,
    /// Relative improvement threshold for the early stop [default: 1e-9]
    #[arg(long)]
    pub plateau_rel_tol: Option<f64>,
    /// RNG seed for the basis initialization (required)
    #[arg(long, required = true)]
    pub seed: u64,
    /// Output JSON path [default: fit.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_fit(a: &FitArgs, cfg: &Config, out_dir: Option<&Path>) -> Result<()> {
    let ctx = Ctx::new(cfg, "fit", out_dir)?;
    let targets_path = ctx.scope.required_path("targets", a.targets.as_deref())?;
    let truth_file = named_load("--targets", &targets_path, TruthMatricesFile::load(&targets_path))?;
    let c = truth_file.constellation()?;
    let sch = build_schedule(truth_file.schedule.clone())?;
    let targets = truth_file.matrices()?;

    let d = FitConfig::default();
    let fit_cfg = FitConfig {
        lambda1: ctx.scope.f64("lambda1", a.lambda1, d.lambda1)?,
        lambda2: ctx.scope.f64("lambda2", a.lambda2, d.lambda2)?,
        lr: ctx.scope.f64("lr", a.lr, d.lr)?,
        max_iters: ctx.scope.usize("max-iters", a.max_iters, d.max_iters)?,
        plateau_window: ctx.scope.usize("plateau-window", a.plateau_window, d.plateau_window)?,
        plateau_rel_tol: ctx.scope.f64("plateau-rel-tol", a.plateau_rel_tol, d.plateau_rel_tol)?,
        seed: a.seed,
    };

    let coarse = fit::fit_p2(&targets, &truth_file.steps, sch.t_steps(), &fit_cfg)?;
    let art = FitArtifact::new(&coarse, &fit_cfg, &c, &sch)?;
    let out = ctx.out_path(a.out.as_deref(), "fit.json");
    art.save(&out)?;

    let mut man = RunManifest::new("fit");
    man.setting("targets", targets_path.display());
    man.setting("lambda1", fit_cfg.lambda1);
    man.setting("lambda2", fit_cfg.lambda2);
    man.setting("lr", fit_cfg.lr);
    man.setting("max-iters", fit_cfg.max_iters);
    man.setting("plateau-window", fit_cfg.plateau_window);
    man.setting("plateau-rel-tol", fit_cfg.plateau_rel_tol);
    man.setting("out", out.display());
    man.seed(a.seed);
    man.input(&targets_path)?;
    man.output(&out)?;
    man.write_beside(&out)?;

    let worst = coarse.nmse.iter().cloned().fold(0.0f64, f64::max);
    println!(
        "fit: {} iterations, basis condition {:.3}, worst step NMSE {:.3e}",
        coarse.iters_run, coarse.condition_v, worst
    );
    println!(
        "materialized diagnostics: pre-clip CK residual {:.2e}, clip mass {:.2e} (cumulative) / {:.2e} (single-step)",
        art.max_preclip_ck_residual, art.max_clip_mass_cum, art.max_clip_mass_single
    );
    println!("wrote {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// check-fit
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct CheckFitArgs {
    /// Fit artifact to evaluate (required)
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Target matrices the fit should reproduce (required)
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Output CSV path [default: check_fit.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_check_fit(a: &CheckFitArgs, cfg: &Config, out_dir: Option<&Path>) -> Result<()> {
    let ctx = Ctx::new(cfg, "check-fit", out_dir)?;
    let fit_path = ctx.scope.required_path("fit", a.fit.as_deref())?;
    let targets_path = ctx.scope.required_path("targets", a.targets.as_deref())?;
    let art = named_load("--fit", &fit_path, FitArtifact::load(&fit_path))?;
    let truth_file = named_load("--targets", &targets_path, TruthMatricesFile::load(&targets_path))?;

    let c = truth_file.constellation()?;
    art.validate_constellation(&c)?;
    if serde_json::to_value(&art.schedule)? != serde_json::to_value(&truth_file.schedule)? {
        return Err(Error::ArtifactMismatch(
            "fit and targets were built against different noise schedules".into(),
        ));
    }

    let sch = build_schedule(truth_file.schedule.clone())?;
    let mat = art.rematerialize()?;
    let targets = truth_file.matrices()?;
    let baseline = truth::heuristic_baseline(&c, sch.cum_var(sch.t_steps()), sch.t_steps())?;

    let mut csv = String::from("k,nmse_fit,nmse_heuristic\n");
    println!("   k     nmse_fit  nmse_heuristic");
    for (i, &k) in truth_file.steps.iter().enumerate() {
        let nf = fit::nmse(&mat.cum[k], &targets[i]);
        let nh = fit::nmse(baseline.cum_at_variance(sch.cum_var(k)), &targets[i]);
        csv.push_str(&format!("{k},{nf},{nh}\n"));
        println!("{k:>4}  {nf:>11.4e}  {nh:>14.4e}");
    }

    let out = ctx.out_path(a.out.as_deref(), "check_fit.csv");
    write_atomic(&out, csv.as_bytes())?;

    let mut man = RunManifest::new("check-fit");
    man.setting("fit", fit_path.display());
    man.setting("targets", targets_path.display());
    man.setting("out", out.display());
    man.input(&fit_path)?;
    man.input(&targets_path)?;
    man.output(&out)?;
    man.write_beside(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train-codebook
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct TrainCodebookArgs {
    /// Constellation size [default: 16]
    #[arg(long)]
    pub order: Option<usize>,
    /// Feature dimension [default: 4]
    #[arg(long)]
    pub dim: Option<usize>,
    /// Gaussian mixture components in the synthetic source [default: 8]
    #[arg(long)]
    pub components: Option<usize>,
    /// Seed of the synthetic source [default: 1000]
    #[arg(long)]
    pub source_seed: Option<u64>,
    /// Training epochs [default: 400]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Batches per epoch [default: 20]
    #[arg(long)]
    pub batches_per_epoch: Option<usize>,
    /// Samples per batch [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial Adam learning rate [default: 0.01]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epochs between learning-rate halvings [default: 80]
    #[arg(long)]
    pub lr_halving_epochs: Option<usize>,
    /// Weight of the detected-codeword pull [default: 1]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Commitment coefficient [default: 0.25]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Neighborhood pull; 0 trains a plain VQ [default: 0.9]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Training-channel SNR in dB [default: 20]
    #[arg(long)]
    pub train_snr_db: Option<f64>,
    /// Samples for the post-training usage histogram [default: 20000]
    #[arg(long)]
    pub usage_samples: Option<usize>,
    /// RNG seed for training (required)
    #[arg(long, required = true)]
    pub seed: u64,
    /// Output JSON path [default: codebook.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_train_codebook(a: &TrainCodebookArgs, cfg: &Config, out_dir: Option<&Path>) -> Result<()> {
    let ctx = Ctx::new(cfg, "train-codebook", out_dir)?;
    let order = ctx.scope.usize("order", a.order, 16)?;
    let c = Constellation::square_qam(order)?;
    let dim = ctx.scope.usize("dim", a.dim, 4)?;
    let components = ctx.scope.usize("components", a.components, 8)?;
    let source_seed = ctx.scope.u64("source-seed", a.source_seed, 1000)?;
    let src = FeatureSource::synthetic(dim, components, source_seed)?;

    let d = TrainConfig::default();
    let train_cfg = TrainConfig {
        epochs: ctx.scope.usize("epochs", a.epochs, d.epochs)?,
        batches_per_epoch: ctx
            .scope
            .usize("batches-per-epoch", a.batches_per_epoch, d.batches_per_epoch)?,
        batch_size: ctx.scope.usize("batch-size", a.batch_size, d.batch_size)?,
        lr: ctx.scope.f64("lr", a.lr, d.lr)?,
        lr_halving_epochs: ctx
            .scope
            .usize("lr-halving-epochs", a.lr_halving_epochs, d.lr_halving_epochs)?,
        alpha: ctx.scope.f64("alpha", a.alpha, d.alpha)?,
        beta: ctx.scope.f64("beta", a.beta, d.beta)?,
        gamma: ctx.scope.f64("gamma", a.gamma, d.gamma)?,
        snr_db: ctx.scope.f64("train-snr-db", a.train_snr_db, d.snr_db)?,
        seed: a.seed,
    };
    let usage_samples = ctx.scope.usize("usage-samples", a.usage_samples, 20_000)?;

    let (cb, stats) = train_som_vq(&c, &src, &train_cfg)?;
    let usage = usage_histogram(&cb, &src, usage_samples, a.seed.wrapping_add(77))?;
    let art = CodebookArtifact::new(
        &cb,
        &c,
        Some(train_cfg.clone()),
        Some(stats.loss_trace.clone()),
        Some(usage),
    )?;
    let out = ctx.out_path(a.out.as_deref(), "codebook.json");
    art.save(&out)?;

    let mut man = RunManifest::new("train-codebook");
    man.setting("order", order);
    man.setting("dim", dim);
    man.setting("components", components);
    man.setting("source-seed", source_seed);
    man.setting("epochs", train_cfg.epochs);
    man.setting("batches-per-epoch", train_cfg.batches_per_epoch);
    man.setting("batch-size", train_cfg.batch_size);
    man.setting("lr", train_cfg.lr);
    man.setting("lr-halving-epochs", train_cfg.lr_halving_epochs);
    man.setting("alpha", train_cfg.alpha);
    man.setting("beta", train_cfg.beta);
    man.setting("gamma", train_cfg.gamma);
    man.setting("train-snr-db", train_cfg.snr_db);
    man.setting("usage-samples", usage_samples);
    man.setting("out", out.display());
    man.seed(a.seed);
    man.output(&out)?;
    man.write_beside(&out)?;

    let tm = topology_metrics(&cb, &c)?;
    println!(
        "train-codebook: {} epochs, final loss {:.4}, grid Spearman {:.3}, neighbor ratio {:.3}",
        stats.loss_trace.len(),
        stats.loss_trace.last().copied().unwrap_or(f64::NAN),
        tm.spearman_mean,
        tm.neighbor_ratio
    );
    println!("wrote {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// codebook-metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct CodebookMetricsArgs {
    /// Codebook artifact to analyze (required)
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    /// Output JSON path [default: codebook_metrics.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_codebook_metrics(a: &CodebookMetricsArgs, cfg: &Config, out_dir: Option<&Path>) -> Result<()> {
    let ctx = Ctx::new(cfg, "codebook-metrics", out_dir)?;
    let cb_path = ctx.scope.required_path("codebook", a.codebook.as_deref())?;
    let art = named_load("--codebook", &cb_path, CodebookArtifact::load(&cb_path))?;
    let cb = art.codebook()?;
    let c = Constellation::square_qam(cb.len())?;
    art.validate_constellation(&c)?;

    let tm = topology_metrics(&cb, &c)?;
    let out = ctx.out_path(a.out.as_deref(), "codebook_metrics.json");
    save_json_atomic(&out, &tm)?;

    let mut man = RunManifest::new("codebook-metrics");
    man.setting("codebook", cb_path.display());
    man.setting("out", out.display());
    man.input(&cb_path)?;
    man.output(&out)?;
    man.write_beside(&out)?;

    println!(
        "codebook-metrics: grid Spearman {:.3}, neighbor/non-neighbor distance ratio {:.3}",
        tm.spearman_mean, tm.neighbor_ratio
    );
    println!("wrote {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate & sweep
// ---------------------------------------------------------------------------

/// Flags shared by `simulate` and `sweep`.
#[derive(Debug, Args)]
pub struct PipelineOpts {
    /// Fit artifact holding the transition model (required)
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Codebook artifact (required)
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    /// Feature source: "synthetic", "zipf", or "uniform" [default: synthetic]
    #[arg(long)]
    pub source: Option<String>,
    /// Mixture components for --source synthetic [default: 8]
    #[arg(long)]
    pub components: Option<usize>,
    /// Seed of the feature source [default: 1000]
    #[arg(long)]
    pub source_seed: Option<u64>,
    /// Component spread for codeword-anchored sources [default: 0.05]
    #[arg(long)]
    pub source_spread: Option<f64>,
    /// Zipf exponent for --source zipf [default: 1]
    #[arg(long)]
    pub zipf_s: Option<f64>,
    /// Samples used to estimate the index prior [default: 200000]
    #[arg(long)]
    pub prior_samples: Option<usize>,
}

struct PipelineBundle {
    c: Constellation,
    sch: NoiseSchedule,
    process: symcorr::diffusion::DiffusionProcess,
    cb: Codebook,
    src: FeatureSource,
    prior: Vec<f64>,
    fit_path: PathBuf,
    cb_path: PathBuf,
    settings: Vec<(&'static str, String)>,
}

fn build_pipeline(ctx: &Ctx, o: &PipelineOpts, seed: u64) -> Result<PipelineBundle> {
    let fit_path = ctx.scope.required_path("fit", o.fit.as_deref())?;
    let cb_path = ctx.scope.required_path("codebook", o.codebook.as_deref())?;
    let fit_art = named_load("--fit", &fit_path, FitArtifact::load(&fit_path))?;
    let cb_art = named_load("--codebook", &cb_path, CodebookArtifact::load(&cb_path))?;
    if fit_art.constellation_key != cb_art.constellation_key {
        return Err(Error::ArtifactMismatch(format!(
            "fit ({}) and codebook ({}) target different constellations",
            fit_art.constellation_key, cb_art.constellation_key
        )));
    }

    let cb = cb_art.codebook()?;
    let c = Constellation::square_qam(cb.len())?;
    fit_art.validate_constellation(&c)?;
    let sch = fit_art.noise_schedule()?;
    let process = fit_art.process()?;

    let kind = ctx.scope.string("source", o.source.as_deref(), "synthetic");
    let source_seed = ctx.scope.u64("source-seed", o.source_seed, 1000)?;
    let components = ctx.scope.usize("components", o.components, 8)?;
    let spread = ctx.scope.f64("source-spread", o.source_spread, 0.05)?;
    let zipf_s = ctx.scope.f64("zipf-s", o.zipf_s, 1.0)?;
    let src = match kind.as_str() {
        "synthetic" => FeatureSource::synthetic(cb.dim, components, source_seed)?,
        "zipf" => FeatureSource::codeword_anchored(&cb, &zipf_weights(cb.len(), zipf_s), spread)?,
        "uniform" => {
            FeatureSource::codeword_anchored(&cb, &vec![1.0 / cb.len() as f64; cb.len()], spread)?
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "source: expected `synthetic`, `zipf`, or `uniform`, got `{other}`"
            )))
        }
    };
    let prior_samples = ctx.scope.usize("prior-samples", o.prior_samples, 200_000)?;
    let prior = estimate_prior(&cb, &src, prior_samples, seed.wrapping_add(77))?;

    let settings = vec![
        ("fit", fit_path.display().to_string()),
        ("codebook", cb_path.display().to_string()),
        ("source", kind.clone()),
        ("components", components.to_string()),
        ("source-seed", source_seed.to_string()),
        ("source-spread", spread.to_string()),
        ("zipf-s", zipf_s.to_string()),
        ("prior-samples", prior_samples.to_string()),
    ];
    Ok(PipelineBundle {
        c,
        sch,
        process,
        cb,
        src,
        prior,
        fit_path,
        cb_path,
        settings,
    })
}

impl PipelineBundle {
    fn pipeline(&self) -> Pipeline<'_> {
        Pipeline {
            constellation: &self.c,
            schedule: &self.sch,
            process: &self.process,
            codebook: &self.cb,
            source: &self.src,
            prior: &self.prior,
        }
    }
}

fn print_point(p: &SimPoint) {
    println!(
        "{:>6.2} dB: detected {:.4}, corrected {:.4}, MAP oracle {:.4}, feature MSE {:.4} -> {:.4} \
         (k*={}{})",
        p.snr_db,
        p.ser_detected,
        p.ser_corrected,
        p.ser_map_oracle,
        p.mse_plain,
        p.mse_corrected,
        p.k_star,
        if p.off_coverage { ", off-coverage" } else { "" }
    );
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub pipe: PipelineOpts,
    /// Operating SNR in dB (required)
    #[arg(long, required = true, allow_hyphen_values = true)]
    pub snr_db: f64,
    /// Symbols to push through the pipeline [default: 100000]
    #[arg(long)]
    pub n_symbols: Option<usize>,
    /// RNG seed (required)
    #[arg(long, required = true)]
    pub seed: u64,
    /// Output CSV path [default: simulate.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_simulate(a: &SimulateArgs, cfg: &Config, out_dir: Option<&Path>) -> Result<()> {
    let ctx = Ctx::new(cfg, "simulate", out_dir)?;
    let bundle = build_pipeline(&ctx, &a.pipe, a.seed)?;
    let n = ctx.scope.usize("n-symbols", a.n_symbols, 100_000)?;

    let point = simulator::simulate_point(&bundle.pipeline(), a.snr_db, n, a.seed)?;
    print_point(&point);

    let out = ctx.out_path(a.out.as_deref(), "simulate.csv");
    write_atomic(&out, simulator::to_csv(std::slice::from_ref(&point)).as_bytes())?;

    let mut man = RunManifest::new("simulate");
    for (k, v) in &bundle.settings {
        man.setting(k, v);
    }
    man.setting("snr-db", a.snr_db);
    man.setting("n-symbols", n);
    man.setting("out", out.display());
    man.seed(a.seed);
    man.input(&bundle.fit_path)?;
    man.input(&bundle.cb_path)?;
    man.output(&out)?;
    man.write_beside(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub pipe: PipelineOpts,
    /// Comma-separated SNR grid in dB; empty produces a header-only report
    /// [default: -3,-2,-1,0,1,2,3,4,5,6]
    #[arg(long, allow_hyphen_values = true)]
    pub snr_grid: Option<String>,
    /// Symbols per operating point [default: 100000]
    #[arg(long)]
    pub n_symbols: Option<usize>,
    /// RNG seed; point i uses seed+i (required)
    #[arg(long, required = true)]
    pub seed: u64,
    /// Output CSV path [default: sweep.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_sweep(a: &SweepArgs, cfg: &Config, out_dir: Option<&Path>) -> Result<()> {
    let ctx = Ctx::new(cfg, "sweep", out_dir)?;
    let bundle = build_pipeline(&ctx, &a.pipe, a.seed)?;
    let n = ctx.scope.usize("n-symbols", a.n_symbols, 100_000)?;
    let grid_raw = ctx
        .scope
        .string("snr-grid", a.snr_grid.as_deref(), "-3,-2,-1,0,1,2,3,4,5,6");
    let grid: Vec<f64> = parse_list("snr-grid", &grid_raw)?;

    let points = if grid.is_empty() {
        Vec::new()
    } else {
        simulator::sweep(&bundle.pipeline(), &grid, n, a.seed)?
    };
    for p in &points {
        print_point(p);
    }

    let out = ctx.out_path(a.out.as_deref(), "sweep.csv");
    write_atomic(&out, simulator::to_csv(&points).as_bytes())?;

    let mut man = RunManifest::new("sweep");
    for (k, v) in &bundle.settings {
        man.setting(k, v);
    }
    man.setting("snr-grid", &grid_raw);
    man.setting("n-symbols", n);
    man.setting("out", out.display());
    man.seed(a.seed);
    man.input(&bundle.fit_path)?;
    man.input(&bundle.cb_path)?;
    man.output(&out)?;
    man.write_beside(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}
