//! Durable on-disk artifacts: fitted transition families and trained
//! codebooks, stored as validated JSON.
//!
//! A fit artifact stores the *generating parameters* — the shared basis and
//! the full interpolated eigenvalue table — rather than the hundred-odd
//! materialized matrices. Loading rebuilds the matrices with the exact same
//! arithmetic as saving did and cross-checks the recorded materialization
//! diagnostics, so a stale or hand-edited file is rejected instead of
//! silently producing a different chain. All floats round-trip bit-exactly
//! through JSON (shortest-representation encoding), which keeps artifact
//! bytes and everything derived from them deterministic.
//!
//! Writes go through a sibling temp file plus rename, so an interrupted run
//! never leaves a half-written artifact at the destination path.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, TrainConfig};
use crate::constellation::Constellation;
use crate::diffusion::DiffusionProcess;
use crate::error::{Error, Result};
use crate::fit::{self, CoarseFit, FitConfig, MaterializedFit};
use crate::schedule::{build_schedule, NoiseSchedule, ScheduleParams};

pub const FIT_FORMAT: &str = "symcorr.fit.v1";
pub const CODEBOOK_FORMAT: &str = "symcorr.codebook.v1";

/// Row-major nested-vector view of a matrix, for serialization.
pub fn matrix_to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

/// Rebuild a matrix from row-major nested vectors.
pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::InvalidArgument("matrix must be non-empty".into()));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidArgument("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn tmp_sibling(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".tmp");
    PathBuf::from(os)
}

/// Write bytes via a sibling temp file and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_sibling(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Serialize `value` as pretty JSON (newline-terminated) with an atomic
/// write.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// A fitted transition family: basis, interpolated eigenvalue table, and
/// the diagnostics recorded when the family was first materialized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitArtifact {
    pub format: String,
    /// Content key of the constellation the fit targets.
    pub constellation_key: String,
    pub schedule: ScheduleParams,
    pub config: FitConfig,
    /// Shared basis, row-major.
    pub v: Vec<Vec<f64>>,
    /// Interpolated eigenvalues, one row per step `0..=T` (row 0 is ones).
    pub diag_full: Vec<Vec<f64>>,
    /// Subsampled steps the coarse fit optimized against.
    pub coarse_steps: Vec<usize>,
    /// Per-coarse-step reconstruction error against the fit targets.
    pub nmse: Vec<f64>,
    pub condition_v: f64,
    pub iters_run: usize,
    pub loss_trace: Vec<(usize, f64)>,
    pub max_preclip_ck_residual: f64,
    pub max_clip_mass_cum: f64,
    pub max_clip_mass_single: f64,
    pub floored_ratio_events: usize,
}

impl FitArtifact {
    /// Interpolate and materialize a coarse fit, recording the diagnostics
    /// alongside the generating parameters.
    pub fn new(
        coarse: &CoarseFit,
        config: &FitConfig,
        c: &Constellation,
        sch: &NoiseSchedule,
    ) -> Result<Self> {
        if coarse.v.nrows() != c.order() {
            return Err(Error::InvalidArgument(format!(
                "fit is over {} states but the constellation has {}",
                coarse.v.nrows(),
                c.order()
            )));
        }
        if coarse.t_steps != sch.t_steps() {
            return Err(Error::InvalidArgument(format!(
                "fit spans {} steps but the schedule has {}",
                coarse.t_steps,
                sch.t_steps()
            )));
        }
        let diag_full = fit::interpolate_full(coarse)?;
        let mat = fit::materialize(&coarse.v, &diag_full)?;
        Ok(Self {
            format: FIT_FORMAT.into(),
            constellation_key: c.content_key(),
            schedule: sch.params().clone(),
            config: config.clone(),
            v: matrix_to_rows(&coarse.v),
            diag_full,
            coarse_steps: coarse.steps.clone(),
            nmse: coarse.nmse.clone(),
            condition_v: coarse.condition_v,
            iters_run: coarse.iters_run,
            loss_trace: coarse.loss_trace.clone(),
            max_preclip_ck_residual: mat.max_preclip_ck_residual,
            max_clip_mass_cum: mat.max_clip_mass_cum,
            max_clip_mass_single: mat.max_clip_mass_single,
            floored_ratio_events: mat.floored_ratio_events,
        })
    }

    fn validate_shape(&self) -> Result<()> {
        if self.format != FIT_FORMAT {
            return Err(Error::ArtifactMismatch(format!(
                "expected format {FIT_FORMAT}, found {:?}",
                self.format
            )));
        }
        let m = self.v.len();
        if m == 0 || self.v.iter().any(|r| r.len() != m) {
            return Err(Error::ArtifactMismatch("basis is not square".into()));
        }
        if self.diag_full.len() != self.schedule.t_steps + 1 {
            return Err(Error::ArtifactMismatch(format!(
                "eigenvalue table covers {} steps, schedule says {}",
                self.diag_full.len().saturating_sub(1),
                self.schedule.t_steps
            )));
        }
        if self.diag_full.iter().any(|d| d.len() != m) {
            return Err(Error::ArtifactMismatch(
                "eigenvalue rows do not match the basis dimension".into(),
            ));
        }
        Ok(())
    }

    /// Check the artifact belongs to this constellation.
    pub fn validate_constellation(&self, c: &Constellation) -> Result<()> {
        if self.constellation_key != c.content_key() || self.v.len() != c.order() {
            return Err(Error::ArtifactMismatch(format!(
                "artifact was fitted for constellation {:?}, not {:?}",
                self.constellation_key,
                c.content_key()
            )));
        }
        Ok(())
    }

    /// Rebuild the full matrix families and verify they still produce the
    /// recorded diagnostics.
    pub fn rematerialize(&self) -> Result<MaterializedFit> {
        self.validate_shape()?;
        let v = rows_to_matrix(&self.v)?;
        let mat = fit::materialize(&v, &self.diag_full)?;
        let drift = (mat.max_preclip_ck_residual - self.max_preclip_ck_residual)
            .abs()
            .max((mat.max_clip_mass_cum - self.max_clip_mass_cum).abs())
            .max((mat.max_clip_mass_single - self.max_clip_mass_single).abs());
        if drift > 1e-9 || mat.floored_ratio_events != self.floored_ratio_events {
            return Err(Error::ArtifactMismatch(format!(
                "rematerialized diagnostics drift {drift:.3e} from the recorded \
                 values; the artifact does not describe these parameters"
            )));
        }
        Ok(mat)
    }

    /// Rebuild the diffusion process the artifact describes.
    pub fn process(&self) -> Result<DiffusionProcess> {
        DiffusionProcess::from_fit(&self.rematerialize()?)
    }

    /// Rebuild the noise schedule the fit was made against.
    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        build_schedule(self.schedule.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate_shape()?;
        save_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a: Self = load_json(path)?;
        a.validate_shape()?;
        Ok(a)
    }
}

/// A trained (or reordered) codebook with its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodebookArtifact {
    pub format: String,
    pub constellation_key: String,
    pub codebook: Codebook,
    /// Training hyper-parameters, absent for hand-built codebooks.
    pub train: Option<TrainConfig>,
    /// Per-epoch mean training loss.
    pub loss_trace: Option<Vec<f64>>,
    /// Quantized-index usage counts measured after training.
    pub usage: Option<Vec<u64>>,
}

impl CodebookArtifact {
    pub fn new(
        codebook: &Codebook,
        c: &Constellation,
        train: Option<TrainConfig>,
        loss_trace: Option<Vec<f64>>,
        usage: Option<Vec<u64>>,
    ) -> Result<Self> {
        if codebook.len() != c.order() {
            return Err(Error::InvalidArgument(format!(
                "codebook has {} entries but the constellation has {} symbols",
                codebook.len(),
                c.order()
            )));
        }
        let a = Self {
            format: CODEBOOK_FORMAT.into(),
            constellation_key: c.content_key(),
            codebook: codebook.clone(),
            train,
            loss_trace,
            usage,
        };
        a.validate_shape()?;
        Ok(a)
    }

    fn validate_shape(&self) -> Result<()> {
        if self.format != CODEBOOK_FORMAT {
            return Err(Error::ArtifactMismatch(format!(
                "expected format {CODEBOOK_FORMAT}, found {:?}",
                self.format
            )));
        }
        // Deserialization bypasses the validating constructor, so re-run it.
        let rebuilt = Codebook::new(self.codebook.codewords.clone())
            .map_err(|e| Error::ArtifactMismatch(format!("stored codebook invalid: {e}")))?;
        if self.codebook.dim != rebuilt.dim {
            return Err(Error::ArtifactMismatch(
                "stored dimension disagrees with the codewords".into(),
            ));
        }
        let m = self.codebook.len();
        let b = &self.codebook.binding;
        let mut seen = vec![false; m];
        if b.len() != m || b.iter().any(|&j| j >= m || std::mem::replace(&mut seen[j], true)) {
            return Err(Error::ArtifactMismatch(
                "binding is not a permutation of the codeword indices".into(),
            ));
        }
        if let Some(u) = &self.usage {
            if u.len() != m {
                return Err(Error::ArtifactMismatch(
                    "usage histogram length does not match the codebook".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn validate_constellation(&self, c: &Constellation) -> Result<()> {
        if self.constellation_key != c.content_key() || self.codebook.len() != c.order() {
            return Err(Error::ArtifactMismatch(format!(
                "artifact was trained for constellation {:?}, not {:?}",
                self.constellation_key,
                c.content_key()
            )));
        }
        Ok(())
    }

    pub fn codebook(&self) -> Result<Codebook> {
        self.validate_shape()?;
        Ok(self.codebook.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate_shape()?;
        save_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a: Self = load_json(path)?;
        a.validate_shape()?;
        Ok(a)
    }
}
