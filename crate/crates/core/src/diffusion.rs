//! Discrete diffusion over symbol indices: the forward corruption chain and
//! its exact reverse.
//!
//! A [`DiffusionProcess`] holds two aligned families of row-stochastic M×M
//! matrices: `cum[k]` maps a clean symbol at step 0 to its distribution at
//! step k, and `single[k]` maps step k−1 to step k. The two must satisfy the
//! Chapman–Kolmogorov relation `cum[k] = cum[k−1]·single[k]` — exactly for
//! hand-built chains, and up to the recorded pre-clip residual for chains
//! materialized from a spectral fit (clipping tiny negative entries back to
//! the simplex trades exact consistency for validity, so the pre-clip
//! residual is the consistency certificate and the post-clip residual is
//! kept as a diagnostic).
//!
//! The reverse direction composes a pluggable [`Denoiser`] with the
//! forward-posterior identity
//!
//! ```text
//! q(u_{k−1}=a | u_k=b, u_0) ∝ single[k][a,b] · cum[k−1][u_0,a]
//! ```
//!
//! mixing the posterior over the denoiser's clean-symbol distribution. With
//! the exact Bayesian denoiser this mixture *is* the true backward kernel of
//! the chain, which the test suite checks by full-distribution propagation.
//!
//! Zero-probability situations are hard errors, never smoothed: observing a
//! symbol the chain cannot produce raises [`Error::ImpossibleObservation`],
//! and a denoiser emitting something that is not a distribution raises
//! [`Error::ContractViolation`].

use nalgebra::DMatrix;
use rand::Rng;

use crate::codebook::Codebook;
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::exec::{self, chunk_ranges, map_chunks};
use crate::fit::MaterializedFit;
use crate::mat;

/// Seed-domain separators so the three Monte-Carlo phases of the loss
/// estimator draw from unrelated streams.
const KL_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;
const LG_SEED_SALT: u64 = 0xD1B5_4A32_D192_ED03;

/// A finite-horizon discrete-state corruption chain.
#[derive(Debug, Clone)]
pub struct DiffusionProcess {
    m: usize,
    t_steps: usize,
    /// `cum[k]` maps step 0 to step k; `cum[0]` is the exact identity.
    cum: Vec<DMatrix<f64>>,
    /// `single[k]` maps step k−1 to step k; `single[0]` is an identity
    /// placeholder so indices line up.
    single: Vec<DMatrix<f64>>,
    ck_residual: f64,
}

fn validate_family(mats: &[DMatrix<f64>], what: &str) -> Result<usize> {
    let m = mats[0].nrows();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "{what} matrices must be at least 2×2"
        )));
    }
    for (k, a) in mats.iter().enumerate() {
        if a.nrows() != m || a.ncols() != m {
            return Err(Error::InvalidArgument(format!(
                "{what}[{k}] is {}×{}, expected {m}×{m}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{what}[{k}] has negative or non-finite entries"
            )));
        }
        if !mat::is_row_stochastic(a, 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "{what}[{k}] rows do not sum to 1 within 1e-9"
            )));
        }
    }
    Ok(m)
}

/// Largest absolute entry of `cum[k] − cum[k−1]·single[k]` over all k.
fn consecutive_ck_residual(cum: &[DMatrix<f64>], single: &[DMatrix<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for k in 1..cum.len() {
        let prod = &cum[k - 1] * &single[k];
        let resid = (&cum[k] - prod).abs().max();
        worst = worst.max(resid);
    }
    worst
}

impl DiffusionProcess {
    /// Build a process from explicit matrix families.
    ///
    /// `cum` and `single` must have equal length T+1 with T ≥ 1; index 0 of
    /// `cum` must be the identity within 1e-9 (it is replaced by the exact
    /// identity), index 0 of `single` is ignored and replaced by an identity
    /// placeholder. Every matrix must be row-stochastic within 1e-9 and the
    /// consecutive Chapman–Kolmogorov residual must not exceed 1e-6.
    pub fn from_parts(cum: Vec<DMatrix<f64>>, single: Vec<DMatrix<f64>>) -> Result<Self> {
        if cum.len() != single.len() || cum.len() < 2 {
            return Err(Error::InvalidArgument(
                "need equal-length cumulative and single-step families covering \
                 at least one step"
                    .into(),
            ));
        }
        let m = validate_family(&cum, "cum")?;
        let ms = validate_family(&single, "single")?;
        if ms != m {
            return Err(Error::InvalidArgument(format!(
                "cumulative matrices are {m}×{m} but single-step are {ms}×{ms}"
            )));
        }
        let eye = DMatrix::<f64>::identity(m, m);
        if (&cum[0] - &eye).abs().max() > 1e-9 {
            return Err(Error::InvalidArgument(
                "cum[0] must be the identity within 1e-9".into(),
            ));
        }
        let mut cum = cum;
        let mut single = single;
        cum[0] = eye.clone();
        single[0] = eye;
        let ck_residual = consecutive_ck_residual(&cum, &single);
        if ck_residual > 1e-6 {
            return Err(Error::InconsistentMatrices(format!(
                "Chapman–Kolmogorov residual {ck_residual:.3e} exceeds 1e-6"
            )));
        }
        Ok(Self {
            m,
            t_steps: cum.len() - 1,
            cum,
            single,
            ck_residual,
        })
    }

    /// Build a process from a materialized spectral fit.
    ///
    /// The fit's *pre-clip* Chapman–Kolmogorov residual must be at most
    /// 1e-8; that certifies the underlying V·D·V⁻¹ family was consistent
    /// before its entries were clipped to the simplex. The (looser)
    /// post-clip residual is recorded in [`DiffusionProcess::ck_residual`]
    /// as a diagnostic, not gated.
    pub fn from_fit(fit: &MaterializedFit) -> Result<Self> {
        if fit.max_preclip_ck_residual > 1e-8 {
            return Err(Error::InconsistentMatrices(format!(
                "pre-clip Chapman–Kolmogorov residual {:.3e} exceeds 1e-8",
                fit.max_preclip_ck_residual
            )));
        }
        if fit.cum.len() != fit.single.len() || fit.cum.len() < 2 {
            return Err(Error::InvalidArgument(
                "materialized fit does not cover any steps".into(),
            ));
        }
        let m = validate_family(&fit.cum, "cum")?;
        validate_family(&fit.single, "single")?;
        let eye = DMatrix::<f64>::identity(m, m);
        if (&fit.cum[0] - &eye).abs().max() > 1e-9 {
            return Err(Error::InvalidArgument(
                "materialized cum[0] must be the identity within 1e-9".into(),
            ));
        }
        let mut cum = fit.cum.clone();
        let mut single = fit.single.clone();
        cum[0] = eye.clone();
        single[0] = eye;
        let ck_residual = consecutive_ck_residual(&cum, &single);
        Ok(Self {
            m,
            t_steps: cum.len() - 1,
            cum,
            single,
            ck_residual,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn t_steps(&self) -> usize {
        self.t_steps
    }

    /// Cumulative transition matrix for step `k` (0 ≤ k ≤ T).
    pub fn cum(&self, k: usize) -> &DMatrix<f64> {
        &self.cum[k]
    }

    /// Single-step transition matrix from step k−1 to k (1 ≤ k ≤ T).
    pub fn single(&self, k: usize) -> &DMatrix<f64> {
        &self.single[k]
    }

    /// Worst consecutive Chapman–Kolmogorov residual measured at load.
    pub fn ck_residual(&self) -> f64 {
        self.ck_residual
    }

    fn check_step(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.t_steps {
            return Err(Error::InvalidArgument(format!(
                "step {k} outside 1..={}",
                self.t_steps
            )));
        }
        Ok(())
    }

    fn check_symbols(&self, u: &[usize]) -> Result<()> {
        if let Some(&bad) = u.iter().find(|&&s| s >= self.m) {
            return Err(Error::InvalidArgument(format!(
                "symbol {bad} out of range for {} states",
                self.m
            )));
        }
        Ok(())
    }

    /// Sample `u_k | u_0` independently per position. `k = 0` is a copy.
    ///
    /// Chunked and seeded so the result is bit-identical at any thread
    /// count.
    pub fn forward_sample(&self, u0: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
        if k > self.t_steps {
            return Err(Error::InvalidArgument(format!(
                "step {k} outside 0..={}",
                self.t_steps
            )));
        }
        self.check_symbols(u0)?;
        if k == 0 {
            return Ok(u0.to_vec());
        }
        let q = &self.cum[k];
        let ranges = chunk_ranges(u0.len());
        let chunks = map_chunks(ranges.len(), |ci| {
            let (start, len) = ranges[ci];
            let mut rng = exec::substream(seed, ci as u64);
            let mut out = Vec::with_capacity(len);
            for &a in &u0[start..start + len] {
                out.push(sample_row(q, a, rng.gen::<f64>()));
            }
            out
        });
        Ok(chunks.concat())
    }

    /// Exact forward posterior `q(u_{k−1} | u_k = b, u_0)` as a length-M
    /// distribution. Errors with [`Error::ImpossibleObservation`] when the
    /// pair `(u_0, b)` has zero probability at step `k`.
    pub fn posterior(&self, u0: usize, b: usize, k: usize) -> Result<Vec<f64>> {
        self.check_step(k)?;
        self.check_symbols(&[u0, b])?;
        let mut row = vec![0.0; self.m];
        if self.posterior_into(u0, b, k, &mut row) {
            Ok(row)
        } else {
            Err(Error::ImpossibleObservation(format!(
                "observing {b} at step {k} from clean symbol {u0} has zero probability"
            )))
        }
    }

    /// Unchecked posterior kernel; returns false (leaving `out` unspecified)
    /// when the normalizer is zero.
    fn posterior_into(&self, u0: usize, b: usize, k: usize, out: &mut [f64]) -> bool {
        let s = &self.single[k];
        let c = &self.cum[k - 1];
        let mut den = 0.0;
        for (a, o) in out.iter_mut().enumerate() {
            let v = s[(a, b)] * c[(u0, a)];
            *o = v;
            den += v;
        }
        if den <= 0.0 {
            return false;
        }
        for o in out.iter_mut() {
            *o /= den;
        }
        true
    }

    /// One reverse step: per-position distributions over `u_{k−1}` given the
    /// corrupted sequence at step `k`, mixing the forward posterior over the
    /// denoiser's clean-symbol distribution.
    ///
    /// Clean symbols whose posterior is undefined for an observed `b`
    /// (`cum[k]` assigns the pair zero probability) are dropped from the
    /// mixture and the row is renormalized; if the whole row has zero mass
    /// the observation itself is impossible and an error is raised. A
    /// denoiser output with entries below −1e-12 or rows off 1 by more than
    /// 1e-6 is a contract violation.
    pub fn reverse_kernel<D>(
        &self,
        denoiser: &D,
        codebook: &Codebook,
        u_k: &[usize],
        k: usize,
    ) -> Result<DMatrix<f64>>
    where
        D: Denoiser + ?Sized,
    {
        self.check_step(k)?;
        self.check_symbols(u_k)?;
        if codebook.len() != self.m {
            return Err(Error::InvalidArgument(format!(
                "codebook has {} codewords but the chain has {} states",
                codebook.len(),
                self.m
            )));
        }
        let embedded = codebook.embed(u_k)?;
        let phat = denoiser.denoise(&embedded, k)?;
        if phat.nrows() != u_k.len() || phat.ncols() != self.m {
            return Err(Error::ContractViolation(format!(
                "denoiser returned {}×{}, expected {}×{}",
                phat.nrows(),
                phat.ncols(),
                u_k.len(),
                self.m
            )));
        }
        for i in 0..phat.nrows() {
            let mut sum = 0.0;
            for a in 0..self.m {
                let v = phat[(i, a)];
                if !v.is_finite() || v < -1e-12 {
                    return Err(Error::ContractViolation(format!(
                        "denoiser row {i} has invalid entry {v}"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::ContractViolation(format!(
                    "denoiser row {i} sums to {sum}, off 1 by more than 1e-6"
                )));
            }
        }

        // Posterior rows depend only on (u0, b), not on the position, so
        // tabulate them once per observed symbol. `None` marks undefined
        // rows (zero forward probability for that (u0, b) pair).
        let mut tables: Vec<Option<Vec<Option<Vec<f64>>>>> = vec![None; self.m];
        for &b in u_k {
            if tables[b].is_none() {
                let mut per_u0 = Vec::with_capacity(self.m);
                let mut buf = vec![0.0; self.m];
                for u0 in 0..self.m {
                    per_u0.push(self.posterior_into(u0, b, k, &mut buf).then(|| buf.clone()));
                }
                tables[b] = Some(per_u0);
            }
        }

        let m = self.m;
        let ranges = chunk_ranges(u_k.len());
        let rows: Vec<std::result::Result<Vec<f64>, usize>> = map_chunks(ranges.len(), |ci| {
            let (start, len) = ranges[ci];
            let mut out = Vec::with_capacity(len * m);
            for i in start..start + len {
                let table = tables[u_k[i]].as_ref().unwrap();
                let mut row = vec![0.0; m];
                for (u0, post) in table.iter().enumerate() {
                    let w = phat[(i, u0)].max(0.0);
                    if w == 0.0 {
                        continue;
                    }
                    if let Some(post) = post {
                        for (r, p) in row.iter_mut().zip(post) {
                            *r += w * p;
                        }
                    }
                }
                let s: f64 = row.iter().sum();
                if s <= 0.0 {
                    return Err(i);
                }
                for r in row.iter_mut() {
                    *r /= s;
                }
                out.extend_from_slice(&row);
            }
            Ok(out)
        });
        let mut flat = Vec::with_capacity(u_k.len() * m);
        for chunk in rows {
            match chunk {
                Ok(c) => flat.extend_from_slice(&c),
                Err(i) => {
                    return Err(Error::ImpossibleObservation(format!(
                        "no clean symbol explains observation {} at step {k} (position {i})",
                        u_k[i]
                    )))
                }
            }
        }
        Ok(DMatrix::from_row_slice(u_k.len(), m, &flat))
    }

    /// Run the full reverse chain from step `k_star` back to a clean-symbol
    /// estimate: ancestral sampling down to step 1, then an argmax over the
    /// final reverse distribution (ties to the lowest index). `k_star = 1`
    /// reduces to the single argmax step.
    pub fn reverse_infer<D>(
        &self,
        denoiser: &D,
        codebook: &Codebook,
        u_k: &[usize],
        k_star: usize,
        seed: u64,
    ) -> Result<Vec<usize>>
    where
        D: Denoiser + ?Sized,
    {
        self.check_step(k_star)?;
        self.check_symbols(u_k)?;
        let mut cur = u_k.to_vec();
        for k in (2..=k_star).rev() {
            let r = self.reverse_kernel(denoiser, codebook, &cur, k)?;
            let ranges = chunk_ranges(cur.len());
            let sampled = map_chunks(ranges.len(), |ci| {
                let (start, len) = ranges[ci];
                let mut rng = exec::substream(seed, ((k as u64) << 32) | ci as u64);
                let mut out = Vec::with_capacity(len);
                for i in start..start + len {
                    out.push(sample_row(&r, i, rng.gen::<f64>()));
                }
                out
            });
            cur = sampled.concat();
        }
        let r = self.reverse_kernel(denoiser, codebook, &cur, 1)?;
        Ok((0..cur.len()).map(|i| argmax_row(&r, i)).collect())
    }

    /// Monte-Carlo estimates of the diffusion training losses on a clean
    /// dataset: the variational bound `L_DT` (reconstruction term plus
    /// `T−1` times the mean step-KL, one uniformly sampled step per
    /// position) and the direct guidance term `L_G` (clean-symbol
    /// cross-entropy of the denoiser at a uniformly sampled step), combined
    /// as `L_DT + λ·L_G`.
    pub fn diffusion_losses<D>(
        &self,
        denoiser: &D,
        codebook: &Codebook,
        u0: &[usize],
        lambda: f64,
        seed: u64,
    ) -> Result<DiffusionLosses>
    where
        D: Denoiser + ?Sized,
    {
        if u0.is_empty() {
            return Err(Error::InvalidArgument(
                "need at least one clean symbol".into(),
            ));
        }
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::InvalidArgument(
                "lambda must be finite and nonnegative".into(),
            ));
        }
        self.check_symbols(u0)?;
        let n = u0.len();
        let t = self.t_steps;

        // Reconstruction: −log p_rev,1(u0 | u1) with u1 ~ cum[1].
        let u1 = self.forward_sample(u0, 1, seed)?;
        let r1 = self.reverse_kernel(denoiser, codebook, &u1, 1)?;
        let recon = (0..n).map(|i| -r1[(i, u0[i])].ln()).sum::<f64>() / n as f64;

        // Step-KL: for each position draw k ~ U{2..T} and u_k ~ cum[k],
        // then KL(posterior ‖ reverse kernel row). Positions are grouped by
        // k so each reverse kernel is evaluated once per step on the
        // subsequence that landed there.
        let kl_mean = if t >= 2 {
            let draws = self.draw_steps(u0, 2, seed ^ KL_SEED_SALT)?;
            let mut by_k: Vec<Vec<usize>> = vec![Vec::new(); t + 1];
            for (i, &(k, _)) in draws.iter().enumerate() {
                by_k[k].push(i);
            }
            let mut total = 0.0;
            let mut q = vec![0.0; self.m];
            for (k, positions) in by_k.iter().enumerate().skip(2) {
                if positions.is_empty() {
                    continue;
                }
                let uk: Vec<usize> = positions.iter().map(|&i| draws[i].1).collect();
                let r = self.reverse_kernel(denoiser, codebook, &uk, k)?;
                for (row, &i) in positions.iter().enumerate() {
                    if !self.posterior_into(u0[i], draws[i].1, k, &mut q) {
                        return Err(Error::ImpossibleObservation(format!(
                            "sampled corruption {} at step {k} is inconsistent with \
                             clean symbol {}",
                            draws[i].1, u0[i]
                        )));
                    }
                    total += kl_div(&q, r.row(row).iter().copied());
                }
            }
            total / n as f64
        } else {
            0.0
        };

        // Guidance: −log p̂(u0 | u_k) at k ~ U{1..T}.
        let draws = self.draw_steps(u0, 1, seed ^ LG_SEED_SALT)?;
        let mut by_k: Vec<Vec<usize>> = vec![Vec::new(); t + 1];
        for (i, &(k, _)) in draws.iter().enumerate() {
            by_k[k].push(i);
        }
        let mut lg_total = 0.0;
        for (k, positions) in by_k.iter().enumerate().skip(1) {
            if positions.is_empty() {
                continue;
            }
            let uk: Vec<usize> = positions.iter().map(|&i| draws[i].1).collect();
            let embedded = codebook.embed(&uk)?;
            let phat = denoiser.denoise(&embedded, k)?;
            if phat.nrows() != uk.len() || phat.ncols() != self.m {
                return Err(Error::ContractViolation(format!(
                    "denoiser returned {}×{}, expected {}×{}",
                    phat.nrows(),
                    phat.ncols(),
                    uk.len(),
                    self.m
                )));
            }
            for (row, &i) in positions.iter().enumerate() {
                lg_total += -phat[(row, u0[i])].ln();
            }
        }
        let l_g = lg_total / n as f64;

        let l_dt = recon + (t.saturating_sub(1)) as f64 * kl_mean;
        Ok(DiffusionLosses {
            recon,
            kl: kl_mean,
            l_dt,
            l_g,
            l_total: l_dt + lambda * l_g,
        })
    }

    /// Per position: a uniform step in `k_min..=T` and a forward sample at
    /// that step. One chunked stream drives both draws.
    fn draw_steps(&self, u0: &[usize], k_min: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
        let t = self.t_steps;
        let ranges = chunk_ranges(u0.len());
        let cum = &self.cum;
        let chunks = map_chunks(ranges.len(), |ci| {
            let (start, len) = ranges[ci];
            let mut rng = exec::substream(seed, ci as u64);
            let mut out = Vec::with_capacity(len);
            for &a in &u0[start..start + len] {
                let k = rng.gen_range(k_min..=t);
                let b = sample_row(&cum[k], a, rng.gen::<f64>());
                out.push((k, b));
            }
            out
        });
        Ok(chunks.concat())
    }
}

/// Inverse-CDF draw from row `i` of a row-stochastic matrix: the first
/// column whose cumulative sum exceeds `r`, falling back to the last
/// positive entry if rounding leaves `r` above the total.
fn sample_row(q: &DMatrix<f64>, i: usize, r: f64) -> usize {
    let m = q.ncols();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for a in 0..m {
        let p = q[(i, a)];
        if p > 0.0 {
            last_positive = a;
        }
        acc += p;
        if r < acc {
            return a;
        }
    }
    last_positive
}

fn argmax_row(r: &DMatrix<f64>, i: usize) -> usize {
    let mut best = 0;
    let mut best_v = r[(i, 0)];
    for a in 1..r.ncols() {
        if r[(i, a)] > best_v {
            best_v = r[(i, a)];
            best = a;
        }
    }
    best
}

/// `KL(q ‖ p)` in nats with the conventions 0·ln(0/p) = 0 and
/// q>0, p=0 → +∞.
fn kl_div(q: &[f64], p: impl Iterator<Item = f64>) -> f64 {
    let mut total = 0.0;
    for (&qa, pa) in q.iter().zip(p) {
        if qa > 0.0 {
            if pa <= 0.0 {
                return f64::INFINITY;
            }
            total += qa * (qa / pa).ln();
        }
    }
    total
}

/// Monte-Carlo loss estimates from [`DiffusionProcess::diffusion_losses`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionLosses {
    /// Mean reconstruction negative log-likelihood (step 1).
    pub recon: f64,
    /// Mean per-position step-KL before the `T−1` scaling.
    pub kl: f64,
    /// Variational bound estimate: `recon + (T−1)·kl`.
    pub l_dt: f64,
    /// Mean clean-symbol cross-entropy of the denoiser.
    pub l_g: f64,
    /// `l_dt + λ·l_g`.
    pub l_total: f64,
}
