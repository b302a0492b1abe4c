//! End-to-end symbol error-correction runs: feature source → quantizer →
//! AWGN channel → detector → reverse-chain corrector, with a matched-filter
//! MAP baseline for reference.
//!
//! One [`simulate_point`] call measures a single SNR operating point:
//!
//! 1. draw clean features and quantize them to symbol indices,
//! 2. modulate each index to its constellation point and add per-axis
//!    Gaussian noise at the requested SNR,
//! 3. detect by minimum distance,
//! 4. map the channel SNR to the nearest corruption step `k*` of the noise
//!    schedule and run the reverse chain from the detected symbols,
//! 5. score symbol error rates (detected / corrected / one-shot MAP) and
//!    feature-space distortion against the clean indices.
//!
//! Everything stochastic is chunk-seeded, so a run is bit-identical for a
//! fixed seed at any thread count, and results carry no wall-clock state —
//! identical inputs give identical output bytes.

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::codebook::{Codebook, FeatureSource};
use crate::constellation::Constellation;
use crate::denoiser::ExactBayesDenoiser;
use crate::diffusion::DiffusionProcess;
use crate::error::{Error, Result};
use crate::exec::{self, chunk_ranges, map_chunks};
use crate::schedule::NoiseSchedule;
use crate::stats;

/// Seed-domain separators: the channel noise and the reverse sampler must
/// not share streams with the feature source.
const NOISE_SALT: u64 = 0xA5A5_5A5A_C3C3_3C3C;
const REVERSE_SALT: u64 = 0x0F0F_F0F0_5555_AAAA;

/// Borrowed inputs shared by every operating point of a run.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub constellation: &'a Constellation,
    pub schedule: &'a NoiseSchedule,
    pub process: &'a DiffusionProcess,
    pub codebook: &'a Codebook,
    pub source: &'a FeatureSource,
    /// Index prior used by the corrector and the MAP baseline.
    pub prior: &'a [f64],
}

/// Measurements at one SNR operating point.
#[derive(Debug, Clone, Serialize)]
pub struct SimPoint {
    pub snr_db: f64,
    pub ser_detected: f64,
    pub ser_corrected: f64,
    pub ser_map_oracle: f64,
    pub mse_plain: f64,
    pub mse_corrected: f64,
    pub n_symbols: u64,
    /// Wilson 95% halfwidth for the detected symbol error rate.
    pub ci_halfwidth: f64,
    /// Reverse-chain starting step chosen for this SNR.
    pub k_star: usize,
    /// True when the SNR falls outside the schedule's covered range, so
    /// `k_star` is a clamped best-effort choice.
    pub off_coverage: bool,
}

/// Column set of the measurement table. `k_star` and the coverage flag are
/// run metadata, not measurements, so they stay out of the CSV.
pub const CSV_HEADER: &str =
    "snr_db,ser_detected,ser_corrected,ser_map_oracle,mse_plain,mse_corrected,n_symbols,ci_halfwidth";

impl SimPoint {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.snr_db,
            self.ser_detected,
            self.ser_corrected,
            self.ser_map_oracle,
            self.mse_plain,
            self.mse_corrected,
            self.n_symbols,
            self.ci_halfwidth
        )
    }
}

/// Render points as a CSV table with a trailing newline.
pub fn to_csv(points: &[SimPoint]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&p.csv_row());
        out.push('\n');
    }
    out
}

/// Run the full pipeline at one SNR. See the module docs for the stages.
pub fn simulate_point(p: &Pipeline, snr_db: f64, n_symbols: usize, seed: u64) -> Result<SimPoint> {
    if n_symbols == 0 {
        return Err(Error::InvalidArgument(
            "need at least one symbol per operating point".into(),
        ));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "SNR must be finite, got {snr_db} dB"
        )));
    }
    let m = p.process.m();
    if p.constellation.order() != m || p.codebook.len() != m {
        return Err(Error::InvalidArgument(format!(
            "constellation ({}), codebook ({}), and chain ({m}) sizes must agree",
            p.constellation.order(),
            p.codebook.len()
        )));
    }
    let eta = 10f64.powf(snr_db / 10.0);
    let k_star = p.schedule.starting_index(eta)?;
    let denoiser = ExactBayesDenoiser::new(p.prior, p.process, p.codebook)?;

    // Clean symbols: quantized source features.
    let feats = p.source.sample(n_symbols, seed)?;
    let mut z = Vec::with_capacity(n_symbols);
    for f in &feats {
        z.push(p.codebook.quantize(f)?);
    }

    // Channel: modulate, add per-axis noise at variance P/(2η), detect.
    let sigma_axis = (p.constellation.power() / (2.0 * eta)).sqrt();
    let c = p.constellation;
    let ranges = chunk_ranges(n_symbols);
    let detected: Vec<usize> = map_chunks(ranges.len(), |ci| {
        let (start, len) = ranges[ci];
        let mut rng = exec::substream(seed ^ NOISE_SALT, ci as u64);
        let mut out = Vec::with_capacity(len);
        for &s in &z[start..start + len] {
            let [px, py] = c.point(s);
            let nx: f64 = StandardNormal.sample(&mut rng);
            let ny: f64 = StandardNormal.sample(&mut rng);
            out.push(c.detect(px + sigma_axis * nx, py + sigma_axis * ny));
        }
        out
    })
    .concat();

    let corrected =
        p.process
            .reverse_infer(&denoiser, p.codebook, &detected, k_star, seed ^ REVERSE_SALT)?;

    // One-shot MAP baseline over the cumulative kernel at k*: the best any
    // single-pass decoder with the same prior knowledge can do.
    let q = p.process.cum(k_star);
    let map_table: Vec<usize> = (0..m)
        .map(|b| {
            let mut best = 0;
            let mut best_v = p.prior[0] * q[(0, b)];
            for a in 1..m {
                let v = p.prior[a] * q[(a, b)];
                if v > best_v {
                    best_v = v;
                    best = a;
                }
            }
            best
        })
        .collect();

    let dim = p.codebook.dim;
    let cw = &p.codebook.codewords;
    let mut err_det = 0u64;
    let mut err_cor = 0u64;
    let mut err_map = 0u64;
    let mut se_plain = 0.0;
    let mut se_cor = 0.0;
    for i in 0..n_symbols {
        let zt = z[i];
        if detected[i] != zt {
            err_det += 1;
        }
        if corrected[i] != zt {
            err_cor += 1;
        }
        if map_table[detected[i]] != zt {
            err_map += 1;
        }
        for d in 0..dim {
            se_plain += (cw[detected[i]][d] - cw[zt][d]).powi(2);
            se_cor += (cw[corrected[i]][d] - cw[zt][d]).powi(2);
        }
    }

    let nf = n_symbols as f64;
    let (lo_db, hi_db) = p.schedule.coverage_db();
    Ok(SimPoint {
        snr_db,
        ser_detected: err_det as f64 / nf,
        ser_corrected: err_cor as f64 / nf,
        ser_map_oracle: err_map as f64 / nf,
        mse_plain: se_plain / (nf * dim as f64),
        mse_corrected: se_cor / (nf * dim as f64),
        n_symbols: n_symbols as u64,
        ci_halfwidth: stats::wilson_halfwidth_95(err_det, n_symbols as u64),
        k_star,
        off_coverage: snr_db < lo_db || snr_db > hi_db,
    })
}

/// Run [`simulate_point`] over an SNR grid. Point `i` uses seed
/// `base_seed + i`, so single points can be reproduced in isolation.
pub fn sweep(
    p: &Pipeline,
    snr_db_grid: &[f64],
    n_symbols: usize,
    base_seed: u64,
) -> Result<Vec<SimPoint>> {
    if snr_db_grid.is_empty() {
        return Err(Error::InvalidArgument("empty SNR grid".into()));
    }
    snr_db_grid
        .iter()
        .enumerate()
        .map(|(i, &s)| simulate_point(p, s, n_symbols, base_seed.wrapping_add(i as u64)))
        .collect()
}
