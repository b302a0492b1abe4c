//! The pluggable denoiser contract and the exact Bayesian implementation.
//!
//! A denoiser maps a sequence of *embedded* corrupted symbols at step `k` to
//! per-position distributions over the clean symbol. Passing embeddings
//! rather than raw indices keeps the contract identical to what a learned,
//! context-aware model would need; the exact denoiser simply inverts the
//! embedding first (codewords are required to be pairwise distinct, so the
//! inversion is well defined — an exact bit-pattern lookup with a
//! nearest-codeword fallback for rows that were produced by arithmetic
//! rather than copied).
//!
//! [`ExactBayesDenoiser`] is the optimal per-position denoiser for a known
//! index prior: `p(a | observed b at step k) ∝ π(a)·cum_k[a, b]`. It stands
//! in for a trained network and gives the correction pipeline its best-case
//! behavior. [`UniformDenoiser`] and [`DeltaDenoiser`] bracket it from below
//! for loss comparisons.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::codebook::Codebook;
use crate::diffusion::DiffusionProcess;
use crate::error::{Error, Result};

/// Per-position clean-symbol distributions from embedded corrupted symbols.
///
/// Implementations must return an N×M matrix with nonnegative rows that sum
/// to one within 1e-9, where N is the number of embedded rows.
pub trait Denoiser {
    fn denoise(&self, embedded: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>>;
}

/// Exact-match inverse of a codebook embedding with a nearest fallback.
#[derive(Debug, Clone)]
pub(crate) struct InverseEmbedding {
    codebook: Codebook,
    exact: HashMap<Vec<u64>, usize>,
}

impl InverseEmbedding {
    pub(crate) fn new(codebook: &Codebook) -> Result<Self> {
        if !codebook.distinct() {
            return Err(Error::InvalidArgument(
                "inverse embedding needs pairwise-distinct codewords".into(),
            ));
        }
        let mut exact = HashMap::with_capacity(codebook.len());
        for (j, c) in codebook.codewords.iter().enumerate() {
            exact.insert(c.iter().map(|v| v.to_bits()).collect(), j);
        }
        Ok(Self {
            codebook: codebook.clone(),
            exact,
        })
    }

    pub(crate) fn dim(&self) -> usize {
        self.codebook.dim
    }

    /// Recover the index whose codeword produced `row`.
    pub(crate) fn index_of(&self, row: &[f64]) -> Result<usize> {
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        if let Some(&j) = self.exact.get(&key) {
            return Ok(j);
        }
        self.codebook.quantize(row)
    }
}

fn embedded_rows(embedded: &DMatrix<f64>, inv: &InverseEmbedding) -> Result<Vec<usize>> {
    if embedded.ncols() != inv.dim() {
        return Err(Error::InvalidArgument(format!(
            "embedded dimension {} does not match codebook dimension {}",
            embedded.ncols(),
            inv.dim()
        )));
    }
    let mut out = Vec::with_capacity(embedded.nrows());
    let mut buf = vec![0.0; embedded.ncols()];
    for i in 0..embedded.nrows() {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = embedded[(i, j)];
        }
        out.push(inv.index_of(&buf)?);
    }
    Ok(out)
}

/// Optimal per-position denoiser for a known prior: Bayes inversion of the
/// cumulative transition matrix at step `k`.
#[derive(Debug, Clone)]
pub struct ExactBayesDenoiser {
    prior: Vec<f64>,
    cum: Vec<DMatrix<f64>>,
    inverse: InverseEmbedding,
}

impl ExactBayesDenoiser {
    pub fn new(prior: &[f64], process: &DiffusionProcess, codebook: &Codebook) -> Result<Self> {
        let m = process.m();
        if prior.len() != m || codebook.len() != m {
            return Err(Error::InvalidArgument(
                "prior, process, and codebook must agree on the symbol count".into(),
            ));
        }
        if prior.iter().any(|&p| p < 0.0) || (prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "prior must be a distribution (nonnegative, sum 1)".into(),
            ));
        }
        Ok(Self {
            prior: prior.to_vec(),
            cum: (0..=process.t_steps())
                .map(|k| process.cum(k).clone())
                .collect(),
            inverse: InverseEmbedding::new(codebook)?,
        })
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    /// The denoiser row for a raw observed index (no embedding round-trip).
    pub fn posterior_row(&self, b: usize, k: usize) -> Result<Vec<f64>> {
        let m = self.prior.len();
        if k == 0 || k >= self.cum.len() {
            return Err(Error::InvalidArgument(format!(
                "step {k} outside 1..={}",
                self.cum.len() - 1
            )));
        }
        if b >= m {
            return Err(Error::InvalidArgument(format!("symbol {b} out of range")));
        }
        let q = &self.cum[k];
        let mut row: Vec<f64> = (0..m).map(|a| self.prior[a] * q[(a, b)]).collect();
        let den: f64 = row.iter().sum();
        if den <= 0.0 {
            return Err(Error::ImpossibleObservation(format!(
                "symbol {b} at step {k} has zero probability under the prior"
            )));
        }
        for v in row.iter_mut() {
            *v /= den;
        }
        Ok(row)
    }
}

impl Denoiser for ExactBayesDenoiser {
    fn denoise(&self, embedded: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
        let indices = embedded_rows(embedded, &self.inverse)?;
        let m = self.prior.len();
        // The row depends only on the observed symbol; compute each distinct
        // symbol once and fan out.
        let mut cache: Vec<Option<Vec<f64>>> = vec![None; m];
        let mut out = DMatrix::zeros(indices.len(), m);
        for (i, &b) in indices.iter().enumerate() {
            if cache[b].is_none() {
                cache[b] = Some(self.posterior_row(b, k)?);
            }
            let row = cache[b].as_ref().unwrap();
            for a in 0..m {
                out[(i, a)] = row[a];
            }
        }
        Ok(out)
    }
}

/// Ignores the observation entirely: every row is uniform.
#[derive(Debug, Clone)]
pub struct UniformDenoiser {
    pub m: usize,
}

impl Denoiser for UniformDenoiser {
    fn denoise(&self, embedded: &DMatrix<f64>, _k: usize) -> Result<DMatrix<f64>> {
        if self.m == 0 {
            return Err(Error::InvalidArgument("need at least one symbol".into()));
        }
        Ok(DMatrix::from_element(
            embedded.nrows(),
            self.m,
            1.0 / self.m as f64,
        ))
    }
}

/// Trusts the observation entirely: a delta at the observed symbol.
#[derive(Debug, Clone)]
pub struct DeltaDenoiser {
    inverse: InverseEmbedding,
    m: usize,
}

impl DeltaDenoiser {
    pub fn new(codebook: &Codebook) -> Result<Self> {
        Ok(Self {
            inverse: InverseEmbedding::new(codebook)?,
            m: codebook.len(),
        })
    }
}

impl Denoiser for DeltaDenoiser {
    fn denoise(&self, embedded: &DMatrix<f64>, _k: usize) -> Result<DMatrix<f64>> {
        let indices = embedded_rows(embedded, &self.inverse)?;
        let mut out = DMatrix::zeros(indices.len(), self.m);
        for (i, &b) in indices.iter().enumerate() {
            out[(i, b)] = 1.0;
        }
        Ok(out)
    }
}
