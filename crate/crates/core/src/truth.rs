//! Ground-truth symbol transition matrices under AWGN.
//!
//! Two kinds of transition kernels on the detected-symbol process:
//!
//! * **Point-to-region** (analytic): the probability that transmitted symbol
//!   `s_i` plus circular complex Gaussian noise of total variance `v` lands
//!   in decision region `𝔸_j`. Square-QAM separability reduces this to a
//!   product of two one-dimensional Gaussian interval probabilities with
//!   per-axis standard deviation `√(v/2)`. Starting from an exact symbol
//!   (time 0) this *is* the cumulative region-to-region kernel.
//!
//! * **Region-to-region** (Monte Carlo): transitions between detected
//!   symbols at two intermediate noise levels. The intermediate point is not
//!   resampled from its region — the path is simulated, which is exactly why
//!   the detected process fails to be Markov: a detected region at step k
//!   does not forget where inside it the continuous point sits.
//!
//! [`markov_violation`] quantifies that failure as the Frobenius distance
//! between the direct cumulative kernel and the would-be Markov
//! factorization through an intermediate step. A linear-variance heuristic
//! baseline ([`heuristic_baseline`]) provides the comparison point used by
//! the fit diagnostics.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::exec::{self, CHUNK};
use crate::schedule::NoiseSchedule;
use crate::stats::normal_cdf;

/// How a transition matrix was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MatrixMethod {
    Analytic,
    MonteCarlo { samples_per_symbol: u64, seed: u64 },
}

/// A set of cumulative transition matrices at selected steps, used as fit
/// targets and emitted by the CLI.
#[derive(Debug, Clone)]
pub struct TruthTransitionSet {
    pub order: usize,
    pub steps: Vec<usize>,
    pub matrices: Vec<DMatrix<f64>>,
    pub methods: Vec<MatrixMethod>,
    /// Cumulative noise variance at each step, for artifact metadata.
    pub variances: Vec<f64>,
}

impl TruthTransitionSet {
    /// Analytic cumulative matrices `Q_{t_k|t_0}` at the given steps.
    pub fn analytic(c: &Constellation, sch: &NoiseSchedule, steps: &[usize]) -> Result<Self> {
        let mut matrices = Vec::with_capacity(steps.len());
        let mut variances = Vec::with_capacity(steps.len());
        for &k in steps {
            if k == 0 || k > sch.t_steps() {
                return Err(Error::InvalidArgument(format!(
                    "step {k} outside [1:{}]",
                    sch.t_steps()
                )));
            }
            variances.push(sch.cum_var(k));
            matrices.push(point_to_region_matrix(c, sch.cum_var(k))?);
        }
        Ok(Self {
            order: c.order(),
            steps: steps.to_vec(),
            methods: vec![MatrixMethod::Analytic; steps.len()],
            matrices,
            variances,
        })
    }
}

/// One-dimensional level-transition matrix: entry (i,j) is the probability
/// that `levels[i]` plus N(0, sigma²) noise falls in the midpoint interval
/// around `levels[j]`.
fn axis_level_transition(levels: &[f64], sigma: f64) -> DMatrix<f64> {
    let n = levels.len();
    if sigma == 0.0 {
        return DMatrix::identity(n, n);
    }
    // Interval boundaries: midpoints, with ±∞ at the ends.
    let mut bounds = Vec::with_capacity(n + 1);
    bounds.push(f64::NEG_INFINITY);
    for w in levels.windows(2) {
        bounds.push(0.5 * (w[0] + w[1]));
    }
    bounds.push(f64::INFINITY);
    DMatrix::from_fn(n, n, |i, j| {
        let hi = if bounds[j + 1].is_infinite() {
            1.0
        } else {
            normal_cdf((bounds[j + 1] - levels[i]) / sigma)
        };
        let lo = if bounds[j].is_infinite() {
            0.0
        } else {
            normal_cdf((bounds[j] - levels[i]) / sigma)
        };
        hi - lo
    })
}

/// Analytic point-to-region transition matrix at total complex noise
/// variance `v`. Rows index the transmitted symbol, columns the detected one.
pub fn point_to_region_matrix(c: &Constellation, v: f64) -> Result<DMatrix<f64>> {
    if v < 0.0 || !v.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise variance must be finite and >= 0, got {v}"
        )));
    }
    let m = c.order();
    let side = c.side();
    if v == 0.0 {
        return Ok(DMatrix::identity(m, m));
    }
    let a = axis_level_transition(c.levels(), (v / 2.0).sqrt());
    // Separability: P[(r1,c1) -> (r2,c2)] = A[r1,r2]·A[c1,c2].
    Ok(DMatrix::from_fn(m, m, |i, j| {
        let (r1, c1) = (i / side, i % side);
        let (r2, c2) = (j / side, j % side);
        a[(r1, r2)] * a[(c1, c2)]
    }))
}

/// Monte-Carlo region-to-region matrix with a zero-visit-row report.
#[derive(Debug, Clone)]
pub struct McMatrix {
    pub matrix: DMatrix<f64>,
    /// Rows that received no samples and were replaced by identity rows.
    pub zero_visit_rows: Vec<usize>,
}

/// Monte-Carlo estimate of the region-to-region kernel `Q_{t_kto|t_kfrom}`.
///
/// Pathwise, stratified sampler: for every symbol `s` the same number of
/// trajectories is drawn (`x' = s + noise(σ̄²_{k_from})`, detect, add the
/// incremental noise, detect again); per-symbol integer counts are then
/// combined with prior weights at normalization time. Sampling is chunked
/// over counter-derived substreams, so the result is bit-identical for a
/// fixed `(seed, samples_per_symbol)` at any thread count.
pub fn region_to_region_matrix(
    c: &Constellation,
    sch: &NoiseSchedule,
    k_from: usize,
    k_to: usize,
    prior: &[f64],
    samples_per_symbol: u64,
    seed: u64,
) -> Result<McMatrix> {
    if k_from >= k_to || k_to > sch.t_steps() {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= k_from < k_to <= {}, got ({k_from}, {k_to})",
            sch.t_steps()
        )));
    }
    if samples_per_symbol == 0 {
        return Err(Error::InvalidArgument("samples_per_symbol must be >= 1".into()));
    }
    let m = c.order();
    validate_prior(prior, m)?;

    let sig1 = (sch.cum_var(k_from) / 2.0).sqrt();
    let sig2 = ((sch.cum_var(k_to) - sch.cum_var(k_from)) / 2.0).sqrt();
    let chunks_per_symbol = samples_per_symbol.div_ceil(CHUNK as u64) as usize;
    let total_chunks = m * chunks_per_symbol;

    let chunk_counts: Vec<Vec<u64>> = exec::map_chunks(total_chunks, |gc| {
        let sym = gc / chunks_per_symbol;
        let local = (gc % chunks_per_symbol) as u64;
        let start = local * CHUNK as u64;
        let len = (samples_per_symbol - start).min(CHUNK as u64);
        let mut rng = exec::substream(seed, gc as u64);
        let p = c.point(sym);
        let mut counts = vec![0u64; m * m];
        for _ in 0..len {
            let n1x: f64 = rng.sample(StandardNormal);
            let n1y: f64 = rng.sample(StandardNormal);
            let x1 = p[0] + sig1 * n1x;
            let y1 = p[1] + sig1 * n1y;
            let i = c.detect(x1, y1);
            let n2x: f64 = rng.sample(StandardNormal);
            let n2y: f64 = rng.sample(StandardNormal);
            let j = c.detect(x1 + sig2 * n2x, y1 + sig2 * n2y);
            counts[i * m + j] += 1;
        }
        counts
    });

    // Exact integer merge per starting symbol, then prior-weighted rows.
    let mut per_symbol = vec![vec![0u64; m * m]; m];
    for (gc, counts) in chunk_counts.iter().enumerate() {
        let sym = gc / chunks_per_symbol;
        for (acc, &v) in per_symbol[sym].iter_mut().zip(counts.iter()) {
            *acc += v;
        }
    }
    let mut combined = DMatrix::zeros(m, m);
    for (sym, counts) in per_symbol.iter().enumerate() {
        let w = prior[sym];
        for i in 0..m {
            for j in 0..m {
                combined[(i, j)] += w * counts[i * m + j] as f64;
            }
        }
    }
    let mut zero_visit_rows = Vec::new();
    for i in 0..m {
        let total: f64 = combined.row(i).sum();
        if total > 0.0 {
            for j in 0..m {
                combined[(i, j)] /= total;
            }
        } else {
            zero_visit_rows.push(i);
            for j in 0..m {
                combined[(i, j)] = if i == j { 1.0 } else { 0.0 };
            }
        }
    }
    Ok(McMatrix {
        matrix: combined,
        zero_visit_rows,
    })
}

fn validate_prior(prior: &[f64], m: usize) -> Result<()> {
    if prior.len() != m {
        return Err(Error::InvalidArgument(format!(
            "prior length {} != order {m}",
            prior.len()
        )));
    }
    if prior.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::InvalidArgument("prior entries must be >= 0".into()));
    }
    let s: f64 = prior.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("prior sums to {s}, not 1")));
    }
    Ok(())
}

/// Result of the non-Markovianity diagnostic.
#[derive(Debug, Clone, Serialize)]
pub struct MarkovViolation {
    pub k1: usize,
    pub k2: usize,
    /// Frobenius error of the Markov factorization, first run.
    pub e: f64,
    /// Same quantity from an independent second run.
    pub e_second_run: f64,
    /// |e − e_second_run|: the scale of pure MC noise in `e`.
    pub fluctuation: f64,
    pub samples_per_symbol: u64,
    pub seed: u64,
}

/// Frobenius-norm test of the Chapman–Kolmogorov factorization
/// `Q_{t_k2|t_0} ≈ Q_{t_k1|t_0} · Q_{t_k2|t_k1}` on the detected-symbol
/// process. Cumulative kernels are analytic; the middle kernel is estimated
/// by Monte Carlo twice (independent seeds) so the returned error can be
/// compared against its own sampling fluctuation.
pub fn markov_violation(
    c: &Constellation,
    sch: &NoiseSchedule,
    k1: usize,
    k2: usize,
    prior: &[f64],
    samples_per_symbol: u64,
    seed: u64,
) -> Result<MarkovViolation> {
    if k1 == 0 || k1 >= k2 || k2 > sch.t_steps() {
        return Err(Error::InvalidArgument(format!(
            "need 0 < k1 < k2 <= {}, got ({k1}, {k2})",
            sch.t_steps()
        )));
    }
    let q_k1 = point_to_region_matrix(c, sch.cum_var(k1))?;
    let q_k2 = point_to_region_matrix(c, sch.cum_var(k2))?;
    let run = |s: u64| -> Result<f64> {
        let mid = region_to_region_matrix(c, sch, k1, k2, prior, samples_per_symbol, s)?;
        Ok(crate::mat::frob_diff(&q_k2, &(&q_k1 * &mid.matrix)))
    };
    let e = run(seed)?;
    let e2 = run(seed.wrapping_add(0x9E37_79B9_7F4A_7C15))?;
    Ok(MarkovViolation {
        k1,
        k2,
        e,
        e_second_run: e2,
        fluctuation: (e - e2).abs(),
        samples_per_symbol,
        seed,
    })
}

/// Heuristic per-step transition matrix at a given step variance: the
/// diagonal holds the correct-detection probability, and the remaining mass
/// is spread over other symbols in proportion to their pairwise
/// error probabilities `½·erfc(d_ij / (2σ_axis·√2))`.
pub fn heuristic_step_matrix(c: &Constellation, step_var: f64) -> Result<DMatrix<f64>> {
    if step_var < 0.0 || !step_var.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "step variance must be finite and >= 0, got {step_var}"
        )));
    }
    let m = c.order();
    if step_var == 0.0 {
        return Ok(DMatrix::identity(m, m));
    }
    let sigma_axis = (step_var / 2.0).sqrt();
    let correct = point_to_region_matrix(c, step_var)?;
    let mut q = DMatrix::zeros(m, m);
    for i in 0..m {
        let pi = c.point(i);
        let mut rest = 0.0;
        for j in 0..m {
            if j == i {
                continue;
            }
            let pj = c.point(j);
            let d = ((pi[0] - pj[0]).powi(2) + (pi[1] - pj[1]).powi(2)).sqrt();
            // Pairwise two-point error probability Q(d/2σ) = ½·erfc(d/(2σ√2)).
            let pe = 0.5 * libm::erfc(d / (2.0 * sigma_axis) / std::f64::consts::SQRT_2);
            q[(i, j)] = pe;
            rest += pe;
        }
        let pc = correct[(i, i)];
        if rest > 0.0 {
            let scale = (1.0 - pc) / rest;
            for j in 0..m {
                if j != i {
                    q[(i, j)] *= scale;
                }
            }
        }
        q[(i, i)] = pc;
    }
    Ok(q)
}

/// Linear-variance heuristic chain: T equal variance increments up to
/// `terminal_var`, per-step matrices from [`heuristic_step_matrix`], and
/// cumulative matrices as their ordered products.
#[derive(Debug, Clone)]
pub struct HeuristicBaseline {
    /// Cumulative variance after step i (0-based): (i+1)·terminal/T.
    pub cum_var: Vec<f64>,
    pub single: Vec<DMatrix<f64>>,
    pub cum: Vec<DMatrix<f64>>,
}

pub fn heuristic_baseline(
    c: &Constellation,
    terminal_var: f64,
    t_steps: usize,
) -> Result<HeuristicBaseline> {
    if t_steps == 0 || terminal_var <= 0.0 {
        return Err(Error::InvalidArgument(
            "heuristic baseline needs t_steps >= 1 and terminal_var > 0".into(),
        ));
    }
    let dv = terminal_var / t_steps as f64;
    let step = heuristic_step_matrix(c, dv)?;
    let mut cum_var = Vec::with_capacity(t_steps);
    let mut single = Vec::with_capacity(t_steps);
    let mut cum: Vec<DMatrix<f64>> = Vec::with_capacity(t_steps);
    for i in 0..t_steps {
        cum_var.push(dv * (i + 1) as f64);
        single.push(step.clone());
        let next = if let Some(prev) = cum.last() {
            prev * &step
        } else {
            step.clone()
        };
        cum.push(next);
    }
    Ok(HeuristicBaseline {
        cum_var,
        single,
        cum,
    })
}

impl HeuristicBaseline {
    /// Cumulative heuristic matrix whose variance best matches `v`.
    pub fn cum_at_variance(&self, v: f64) -> &DMatrix<f64> {
        let mut best = 0;
        let mut best_d = (self.cum_var[0] - v).abs();
        for (i, &bv) in self.cum_var.iter().enumerate().skip(1) {
            let d = (bv - v).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        &self.cum[best]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::is_row_stochastic;

    fn qam16() -> (Constellation, NoiseSchedule) {
        (
            Constellation::square_qam(16).unwrap(),
            NoiseSchedule::default_params().unwrap(),
        )
    }

    #[test]
    fn point_to_region_zero_noise_is_identity() {
        let (c, _) = qam16();
        let q = point_to_region_matrix(&c, 0.0).unwrap();
        assert_eq!(q, DMatrix::identity(16, 16));
    }

    #[test]
    fn point_to_region_rows_stochastic() {
        let (c, sch) = qam16();
        for k in [1, 9, 50, 100] {
            let q = point_to_region_matrix(&c, sch.cum_var(k)).unwrap();
            assert!(is_row_stochastic(&q, 1e-9), "k={k}");
        }
    }

    #[test]
    fn point_to_region_huge_noise_favors_corners() {
        // As v → ∞ the landing point forgets the start; semi-infinite corner
        // regions dominate every row. Check an interior row.
        let (c, _) = qam16();
        let q = point_to_region_matrix(&c, 1e6).unwrap();
        let interior = 5; // row 1, col 1
        let corners = [0, 3, 12, 15];
        let corner_mass: f64 = corners.iter().map(|&j| q[(interior, j)]).sum();
        assert!(corner_mass > 0.9, "corner mass {corner_mass}");
        for &cj in &corners {
            for j in 0..16 {
                if !corners.contains(&j) {
                    assert!(q[(interior, cj)] > q[(interior, j)]);
                }
            }
        }
    }

    #[test]
    fn point_to_region_negative_variance_rejected() {
        let (c, _) = qam16();
        assert!(point_to_region_matrix(&c, -1.0).is_err());
    }

    #[test]
    fn point_to_region_matches_mc_oracle() {
        // Entrywise agreement with an independent MC estimate at the step-20
        // noise level. With k_from = 0 every row gets exactly n samples.
        let (c, sch) = qam16();
        let n = 100_000u64;
        let analytic = point_to_region_matrix(&c, sch.cum_var(20)).unwrap();
        let prior = vec![1.0 / 16.0; 16];
        let mc = region_to_region_matrix(&c, &sch, 0, 20, &prior, n, 1234).unwrap();
        let mut within = 0;
        for i in 0..16 {
            for j in 0..16 {
                let p = analytic[(i, j)];
                // SE from the known truth (the MC estimate degenerates on
                // zero-count cells), plus slack for Poisson discreteness in
                // the far tail.
                let se = (p * (1.0 - p) / n as f64).sqrt();
                if (mc.matrix[(i, j)] - p).abs() <= 3.0 * se + 5.0 / n as f64 {
                    within += 1;
                }
            }
        }
        assert!(within >= 254, "only {within}/256 entries within 3 SE");
    }

    #[test]
    fn region_to_region_near_identity_for_tiny_increment() {
        let (c, sch) = qam16();
        // First step after the cap: k 1 -> 2 adds ~0.02 variance on top of
        // the 20 dB starting noise, transitions stay heavily diagonal.
        let prior = vec![1.0 / 16.0; 16];
        let mc = region_to_region_matrix(&c, &sch, 1, 2, &prior, 20_000, 7).unwrap();
        for i in 0..16 {
            assert!(mc.matrix[(i, i)] > 0.9, "diag {i} = {}", mc.matrix[(i, i)]);
        }
        assert!(mc.zero_visit_rows.is_empty());
        assert!(is_row_stochastic(&mc.matrix, 1e-9));
    }

    #[test]
    fn region_to_region_rejects_bad_args() {
        let (c, sch) = qam16();
        let prior = vec![1.0 / 16.0; 16];
        assert!(region_to_region_matrix(&c, &sch, 5, 5, &prior, 10, 0).is_err());
        assert!(region_to_region_matrix(&c, &sch, 5, 4, &prior, 10, 0).is_err());
        assert!(region_to_region_matrix(&c, &sch, 0, 101, &prior, 10, 0).is_err());
        let bad_prior = vec![0.5; 16];
        assert!(region_to_region_matrix(&c, &sch, 0, 5, &bad_prior, 10, 0).is_err());
    }

    #[test]
    fn qpsk_symmetry_equalizes_diagonal() {
        // QPSK under the 4-fold rotation group: all diagonal entries of any
        // region-to-region kernel agree up to MC error.
        let c = Constellation::square_qam(4).unwrap();
        let sch = NoiseSchedule::default_params().unwrap();
        let prior = vec![0.25; 4];
        let n = 200_000u64;
        let mc = region_to_region_matrix(&c, &sch, 9, 20, &prior, n, 99).unwrap();
        let diags: Vec<f64> = (0..4).map(|i| mc.matrix[(i, i)]).collect();
        let mean = diags.iter().sum::<f64>() / 4.0;
        let se = (mean * (1.0 - mean) / n as f64).sqrt();
        for d in diags {
            assert!((d - mean).abs() < 3.0 * se * 2.0, "d={d} mean={mean}");
        }
    }

    #[test]
    fn markov_violation_zero_for_degenerate_noiseless_chain() {
        // Degenerate construction: push the whole schedule to ~200 dB SNR so
        // every transition is exactly identity at f64 scale (noise σ ≈ 1e-10
        // never crosses a decision boundary). The factorization is then
        // exact and e must be exactly zero.
        let c = Constellation::square_qam(16).unwrap();
        let sch = crate::schedule::build_schedule(crate::schedule::ScheduleParams {
            xi2: 200.0,
            eta_cap_db: 220.0,
            ..Default::default()
        })
        .unwrap();
        let prior = vec![1.0 / 16.0; 16];
        let mv = markov_violation(&c, &sch, 9, 20, &prior, 2_000, 3).unwrap();
        assert_eq!(mv.e, 0.0);
        assert_eq!(mv.fluctuation, 0.0);
    }

    #[test]
    fn markov_violation_remark_values() {
        // Reduced-sample version of the published diagnostic; the full-size
        // run lives in the acceptance suite. 2e4 samples/symbol keeps the MC
        // noise near 3e-3, well inside the ±0.02 window.
        let (c, sch) = qam16();
        let prior = vec![1.0 / 16.0; 16];
        let mv = markov_violation(&c, &sch, 9, 20, &prior, 20_000, 5).unwrap();
        assert!((mv.e - 0.2412).abs() < 0.02, "e={}", mv.e);
        assert!(mv.e > 10.0 * mv.fluctuation);
    }

    #[test]
    fn heuristic_step_zero_noise_identity_and_stochastic_rows() {
        let (c, sch) = qam16();
        let id = heuristic_step_matrix(&c, 0.0).unwrap();
        assert_eq!(id, DMatrix::identity(16, 16));
        let q = heuristic_step_matrix(&c, sch.cum_var(100) / 100.0).unwrap();
        assert!(is_row_stochastic(&q, 1e-9));
        // Nearer symbols get more of the error mass.
        let p_near = q[(5, 4)]; // grid distance 1
        let p_far = q[(5, 15)]; // far corner
        assert!(p_near > p_far * 10.0);
    }

    #[test]
    fn heuristic_offdiag_ratios_track_pairwise_error_oracle() {
        // Off-diagonal ratios should match a two-point MC error oracle
        // within 5% for the dominant (nearest-neighbor vs diagonal) pair.
        let (c, _) = qam16();
        let v = 0.15;
        let q = heuristic_step_matrix(&c, v).unwrap();
        let ratio = q[(5, 4)] / q[(5, 0)];
        // MC oracle: probability of crossing the midpoint hyperplane towards
        // each competitor from symbol 5.
        let sigma = (v / 2.0).sqrt();
        let mut rng = exec::substream(424, 0);
        let (mut e4, mut e0) = (0u64, 0u64);
        let n = 2_000_000;
        let p5 = c.point(5);
        for _ in 0..n {
            let x = p5[0] + sigma * rng.sample::<f64, _>(StandardNormal);
            let y = p5[1] + sigma * rng.sample::<f64, _>(StandardNormal);
            for (tgt, cnt) in [(4usize, &mut e4), (0usize, &mut e0)] {
                let pt = c.point(tgt);
                let dx = ((x - p5[0]) * (pt[0] - p5[0]) + (y - p5[1]) * (pt[1] - p5[1]))
                    / ((pt[0] - p5[0]).powi(2) + (pt[1] - p5[1]).powi(2)).sqrt();
                let half = 0.5
                    * ((pt[0] - p5[0]).powi(2) + (pt[1] - p5[1]).powi(2))
                        .sqrt();
                if dx > half {
                    *cnt += 1;
                }
            }
        }
        let oracle_ratio = e4 as f64 / e0 as f64;
        assert!(
            (ratio / oracle_ratio - 1.0).abs() < 0.05,
            "heuristic ratio {ratio} vs oracle {oracle_ratio}"
        );
    }

    #[test]
    fn heuristic_baseline_cumulative_products() {
        let (c, _) = qam16();
        let hb = heuristic_baseline(&c, 2.0, 10).unwrap();
        assert_eq!(hb.cum.len(), 10);
        let direct = &hb.single[0] * &hb.single[1];
        assert!(crate::mat::frob_diff(&hb.cum[1], &direct) < 1e-14);
        for q in &hb.cum {
            assert!(is_row_stochastic(q, 1e-9));
        }
        // Variance matching picks the nearest step.
        let v = hb.cum_var[3] + 0.01;
        assert_eq!(
            hb.cum_at_variance(v) as *const _,
            &hb.cum[3] as *const _
        );
    }
}
