//! Sigmoid noise schedule: step times, per-step SNR targets, cumulative and
//! per-step noise variances, and reverse-start selection.
//!
//! The schedule assigns each step `k ∈ [1:T]` a target SNR
//!
//! ```text
//! η̄_k [dB] = ξ1 · 10·log10((1−ω_{t_{k−1}})/ω_{t_{k−1}}) + ξ2
//! ```
//!
//! where `ω_t` is a sigmoid warp normalized to ω(0)=0, ω(1)=1. The cumulative
//! noise variance is then `σ̄²_k = P·10^{−η̄_k/10}`. Because ω(0)=0 the k=1
//! evaluation is formally infinite SNR; it is clamped to a configurable cap
//! (default 20 dB) so the first step is near-identity but non-degenerate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_T: usize = 100;
pub const DEFAULT_NU_START: f64 = 0.025;
pub const DEFAULT_NU_END: f64 = 1.25;
pub const DEFAULT_XI1: f64 = 0.45;
pub const DEFAULT_XI2: f64 = 6.5;
pub const DEFAULT_ETA_CAP_DB: f64 = 20.0;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Normalized sigmoid warp on [0,1]: ω(0)=0, ω(1)=1, strictly increasing.
pub fn omega(t: f64, nu_start: f64, nu_end: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t={t} outside [0,1]")));
    }
    let lo = sigmoid(nu_start);
    let hi = sigmoid(nu_end);
    Ok((sigmoid(t * (nu_end - nu_start) + nu_start) - lo) / (hi - lo))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub t_steps: usize,
    pub nu_start: f64,
    pub nu_end: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub power: f64,
    pub eta_cap_db: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            t_steps: DEFAULT_T,
            nu_start: DEFAULT_NU_START,
            nu_end: DEFAULT_NU_END,
            xi1: DEFAULT_XI1,
            xi2: DEFAULT_XI2,
            power: 1.0,
            eta_cap_db: DEFAULT_ETA_CAP_DB,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    /// Step times t_k = k/T for k ∈ [0:T].
    times: Vec<f64>,
    /// Per-step SNR targets in dB for k ∈ [1:T]; index 0 is unused (+∞).
    eta_db: Vec<f64>,
    /// Cumulative noise variance σ̄²_k, with σ̄²_0 = 0; strictly increasing.
    cum_var: Vec<f64>,
    /// Per-step variance increments σ²_k = σ̄²_k − σ̄²_{k−1}; index 0 is 0.
    step_var: Vec<f64>,
}

/// Construct the schedule from explicit parameters.
pub fn build_schedule(params: ScheduleParams) -> Result<NoiseSchedule> {
    let t_steps = params.t_steps;
    if t_steps < 2 {
        return Err(Error::InvalidArgument(format!("T={t_steps} must be >= 2")));
    }
    if params.power <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "power {} must be positive",
            params.power
        )));
    }
    let times: Vec<f64> = (0..=t_steps).map(|k| k as f64 / t_steps as f64).collect();
    let mut eta_db = vec![f64::INFINITY; t_steps + 1];
    let mut cum_var = vec![0.0; t_steps + 1];
    let mut step_var = vec![0.0; t_steps + 1];
    for k in 1..=t_steps {
        let om = omega(times[k - 1], params.nu_start, params.nu_end)?;
        // ω(t_0)=0 makes the log-odds infinite; the cap handles it (and any
        // other step that would exceed it, though with defaults only k=1 does).
        let raw = if om <= 0.0 {
            f64::INFINITY
        } else {
            params.xi1 * 10.0 * ((1.0 - om) / om).log10() + params.xi2
        };
        eta_db[k] = raw.min(params.eta_cap_db);
        cum_var[k] = params.power * 10f64.powf(-eta_db[k] / 10.0);
        step_var[k] = cum_var[k] - cum_var[k - 1];
        if step_var[k] <= 0.0 {
            return Err(Error::Schedule(format!(
                "cumulative variance not strictly increasing at k={k} \
                 ({} -> {}); adjust the cap or shape parameters",
                cum_var[k - 1],
                cum_var[k]
            )));
        }
    }
    Ok(NoiseSchedule {
        params,
        times,
        eta_db,
        cum_var,
        step_var,
    })
}

impl NoiseSchedule {
    /// The default schedule: T=100, sigmoid shape (0.025, 1.25, 0.45, 6.5),
    /// unit power, 20 dB cap.
    pub fn default_params() -> Result<Self> {
        build_schedule(ScheduleParams::default())
    }

    pub fn t_steps(&self) -> usize {
        self.params.t_steps
    }

    pub fn power(&self) -> f64 {
        self.params.power
    }

    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }

    /// Per-step SNR target in dB (k ≥ 1).
    pub fn eta_db(&self, k: usize) -> f64 {
        self.eta_db[k]
    }

    /// Cumulative noise variance σ̄²_k (total complex variance).
    pub fn cum_var(&self, k: usize) -> f64 {
        self.cum_var[k]
    }

    pub fn cum_vars(&self) -> &[f64] {
        &self.cum_var
    }

    /// Per-step variance increment σ²_k.
    pub fn step_var(&self, k: usize) -> f64 {
        self.step_var[k]
    }

    /// Linear SNR corresponding to the cumulative noise at step k.
    pub fn snr_linear_at(&self, k: usize) -> f64 {
        self.params.power / self.cum_var[k]
    }

    /// Reverse-correction starting step for a channel at linear SNR `eta`:
    /// the k whose cumulative noise best matches, `argmin_k |η − P/σ̄²_k|`,
    /// compared in linear scale; ties go to the smaller k.
    pub fn starting_index(&self, eta: f64) -> Result<usize> {
        if eta <= 0.0 || !eta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "linear SNR must be positive and finite, got {eta}"
            )));
        }
        let mut best_k = 1;
        let mut best = (eta - self.snr_linear_at(1)).abs();
        for k in 2..=self.params.t_steps {
            let d = (eta - self.snr_linear_at(k)).abs();
            if d < best {
                best = d;
                best_k = k;
            }
        }
        Ok(best_k)
    }

    /// dB SNR range [low, high] covered by the schedule steps.
    pub fn coverage_db(&self) -> (f64, f64) {
        (self.eta_db[self.params.t_steps], self.eta_db[1])
    }
}
