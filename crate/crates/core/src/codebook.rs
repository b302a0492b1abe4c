//! Vector-quantization codebooks with channel-aware, SOM-regularized training.
//!
//! The codebook binds feature-space codewords to constellation symbols, so a
//! quantized feature travels the channel as a symbol and comes back as a
//! (possibly different) symbol. Training therefore pulls codewords toward the
//! features that *land* on them after modulation, noise, and detection — not
//! toward the features that selected them — and optionally drags the
//! grid-neighbors of the landing symbol along (`gamma > 0`). That
//! neighborhood pull is what makes grid-adjacent symbols end up with nearby
//! codewords, which is the property the downstream corrector exploits: a
//! one-step symbol error then lands on a codeword close in feature space.
//!
//! The trainer assumes an identity codec (features are quantized directly),
//! so the encoder-side reconstruction and commitment terms of the usual VQ
//! loss carry no codebook gradient under straight-through semantics; the
//! `beta` coefficient is accepted for interface completeness but inert here.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::exec::{self, substream, CHUNK};
use crate::optim::Adam;
use crate::stats;

/// A feature-space codebook bound to constellation symbols.
///
/// Row `j` of `codewords` is the feature vector transmitted as symbol `j`.
/// `binding[j]` records which originally-trained codeword now sits at symbol
/// `j` (identity straight out of training; a permutation after reordering).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Codebook {
    pub dim: usize,
    pub codewords: Vec<Vec<f64>>,
    pub binding: Vec<usize>,
}

impl Codebook {
    pub fn new(codewords: Vec<Vec<f64>>) -> Result<Self> {
        if codewords.is_empty() {
            return Err(Error::InvalidArgument("codebook cannot be empty".into()));
        }
        let dim = codewords[0].len();
        if dim == 0 || codewords.iter().any(|c| c.len() != dim) {
            return Err(Error::InvalidArgument(
                "codewords must share a positive dimension".into(),
            ));
        }
        if codewords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("codewords must be finite".into()));
        }
        let binding = (0..codewords.len()).collect();
        Ok(Self { dim, codewords, binding })
    }

    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    /// Nearest codeword by squared Euclidean distance; ties break low.
    pub fn quantize(&self, y: &[f64]) -> Result<usize> {
        if y.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "feature dimension {} does not match codebook dimension {}",
                y.len(),
                self.dim
            )));
        }
        let mut best = 0;
        let mut best_d2 = f64::INFINITY;
        for (j, c) in self.codewords.iter().enumerate() {
            let d2: f64 = c.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best_d2 {
                best_d2 = d2;
                best = j;
            }
        }
        Ok(best)
    }

    /// Embed an index sequence as the matrix of its codewords (N×dim).
    pub fn embed(&self, u: &[usize]) -> Result<nalgebra::DMatrix<f64>> {
        for &i in u {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "index {i} out of range for {} codewords",
                    self.len()
                )));
            }
        }
        Ok(nalgebra::DMatrix::from_fn(u.len(), self.dim, |r, c| {
            self.codewords[u[r]][c]
        }))
    }

    /// True when all codewords are pairwise distinct (exact comparison),
    /// i.e. quantization and inverse embedding are well defined.
    pub fn distinct(&self) -> bool {
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                if self.codewords[i] == self.codewords[j] {
                    return false;
                }
            }
        }
        true
    }
}

/// A Gaussian-mixture feature generator (diagonal covariances).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSource {
    pub dim: usize,
    pub means: Vec<Vec<f64>>,
    /// Per-component, per-coordinate standard deviations.
    pub sigs: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl FeatureSource {
    /// The default synthetic source: 8 anisotropic components in ℝ⁴ with
    /// uneven weights, so quantized-index usage comes out structured rather
    /// than uniform.
    pub fn synthetic(dim: usize, n_components: usize, seed: u64) -> Result<Self> {
        if dim == 0 || n_components == 0 {
            return Err(Error::InvalidArgument(
                "source needs dim >= 1 and at least one component".into(),
            ));
        }
        let mut rng = substream(seed, 0);
        let mut means = Vec::with_capacity(n_components);
        for _ in 0..n_components {
            means.push((0..dim).map(|_| StandardNormal.sample(&mut rng)).collect());
        }
        let mut sigs = Vec::with_capacity(n_components);
        for _ in 0..n_components {
            sigs.push((0..dim).map(|_| 0.08 + 0.27 * rng.gen::<f64>()).collect());
        }
        let mut weights: Vec<f64> = (0..n_components).map(|_| 0.5 + rng.gen::<f64>()).collect();
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
        Ok(Self { dim, means, sigs, weights })
    }

    /// A mixture with one isotropic component per codeword. With a small
    /// `spread` relative to codeword separation, the quantized-index
    /// distribution tracks `weights` closely — handy for dialing in a known
    /// skew (e.g. Zipf) on the symbol prior.
    pub fn codeword_anchored(cb: &Codebook, weights: &[f64], spread: f64) -> Result<Self> {
        if weights.len() != cb.len() {
            return Err(Error::InvalidArgument(
                "need one weight per codeword".into(),
            ));
        }
        if spread <= 0.0 || weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidArgument(
                "spread must be positive and weights nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument("weights must not all be zero".into()));
        }
        Ok(Self {
            dim: cb.dim,
            means: cb.codewords.clone(),
            sigs: vec![vec![spread; cb.dim]; cb.len()],
            weights: weights.iter().map(|w| w / total).collect(),
        })
    }

    fn validate(&self) -> Result<()> {
        let k = self.means.len();
        if k == 0 || self.sigs.len() != k || self.weights.len() != k {
            return Err(Error::InvalidArgument(
                "mixture needs matching means/sigs/weights".into(),
            ));
        }
        if self.means.iter().any(|m| m.len() != self.dim)
            || self.sigs.iter().any(|s| s.len() != self.dim)
        {
            return Err(Error::InvalidArgument(
                "mixture component dimensions must match".into(),
            ));
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
            || self.weights.iter().any(|&w| w < 0.0)
        {
            return Err(Error::InvalidArgument(
                "mixture weights must be a distribution".into(),
            ));
        }
        Ok(())
    }

    /// Draw `n` features sequentially from a caller-owned stream. Used by the
    /// trainer, where draws interleave with channel noise on one stream.
    pub fn sample_with(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut u: f64 = rng.gen();
            let mut comp = self.weights.len() - 1;
            for (c, &w) in self.weights.iter().enumerate() {
                if u < w {
                    comp = c;
                    break;
                }
                u -= w;
            }
            let mean = &self.means[comp];
            let sig = &self.sigs[comp];
            out.push(
                (0..self.dim)
                    .map(|d| {
                        let z: f64 = StandardNormal.sample(rng);
                        mean[d] + sig[d] * z
                    })
                    .collect(),
            );
        }
        Ok(out)
    }

    /// Draw `n` features, chunked over derived substreams so the result is
    /// identical at any thread count.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let n_chunks = n.div_ceil(CHUNK);
        let chunks = exec::map_chunks(n_chunks, |c| {
            let mut rng = substream(seed, c as u64);
            let count = CHUNK.min(n - c * CHUNK);
            self.sample_with(count, &mut rng).expect("validated above")
        });
        Ok(chunks.into_iter().flatten().collect())
    }
}

/// Zipf weights `w_j ∝ 1/(j+1)^s` over `m` indices.
pub fn zipf_weights(m: usize, s: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (1..=m).map(|j| (j as f64).powf(-s)).collect();
    let total: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= total;
    }
    w
}

/// Hyper-parameters for [`train_som_vq`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate halves every this many epochs.
    pub lr_halving_epochs: usize,
    /// Weight of the pull toward the detected symbol's codeword.
    pub alpha: f64,
    /// Commitment coefficient; inert with the identity codec (see module
    /// docs) but recorded in artifacts for interface completeness.
    pub beta: f64,
    /// Weight of the neighborhood pull; 0 recovers plain VQ.
    pub gamma: f64,
    /// Training-channel SNR in dB.
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            batches_per_epoch: 20,
            batch_size: 32,
            lr: 0.01,
            lr_halving_epochs: 80,
            alpha: 1.0,
            beta: 0.25,
            gamma: 0.9,
            snr_db: 20.0,
            seed: 0,
        }
    }
}

/// Training diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainStats {
    /// Mean batch loss per epoch.
    pub loss_trace: Vec<f64>,
    pub batches_run: usize,
    pub final_lr: f64,
}

/// Farthest-point sampling over a pool drawn from the source: spread-out,
/// deterministic initial codewords (k-means++-flavored, but maximal rather
/// than randomized).
fn fps_init(src: &FeatureSource, m: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let pool = src.sample(4096, seed ^ 0x9E37_79B9)?;
    let d2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    let mut chosen = vec![0usize];
    let mut dist: Vec<f64> = pool.iter().map(|p| d2(p, &pool[0])).collect();
    for _ in 1..m {
        let mut best = 0;
        for (i, &v) in dist.iter().enumerate() {
            if v > dist[best] {
                best = i;
            }
        }
        chosen.push(best);
        for (i, v) in dist.iter_mut().enumerate() {
            *v = v.min(d2(&pool[i], &pool[best]));
        }
    }
    Ok(chosen.into_iter().map(|i| pool[i].clone()).collect())
}

/// Train a codebook through the channel: quantize a feature batch, modulate,
/// add AWGN at `snr_db`, detect, then pull the *detected* codeword (weight
/// `alpha`) and its grid-neighbors (weight `gamma`) toward the feature.
///
/// Single-threaded by design — every batch depends on the previous update —
/// and bit-deterministic for a fixed seed.
pub fn train_som_vq(
    c: &Constellation,
    src: &FeatureSource,
    cfg: &TrainConfig,
) -> Result<(Codebook, TrainStats)> {
    src.validate()?;
    let m = c.order();
    if cfg.epochs == 0 || cfg.batches_per_epoch == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "training needs epochs, batches, and batch size >= 1".into(),
        ));
    }
    if cfg.lr <= 0.0 || cfg.alpha < 0.0 || cfg.gamma < 0.0 || cfg.lr_halving_epochs == 0 {
        return Err(Error::InvalidArgument(
            "training needs lr > 0, alpha/gamma >= 0, halving period >= 1".into(),
        ));
    }
    let dim = src.dim;
    let neighborhoods: Vec<Vec<usize>> = (0..m).map(|j| c.grid_neighbors(j)).collect();

    // Flat row-major codeword storage so one Adam instance covers everything.
    let mut cw: Vec<f64> = fps_init(src, m, cfg.seed)?.into_iter().flatten().collect();
    let mut adam = Adam::new(cfg.lr, m * dim);
    let mut rng = substream(cfg.seed, 0);
    let sig_ax = (10f64.powf(-cfg.snr_db / 10.0) * c.power() / 2.0).sqrt();

    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut batches_run = 0;
    let mut lr = cfg.lr;
    for ep in 0..cfg.epochs {
        lr = cfg.lr * 0.5f64.powi((ep / cfg.lr_halving_epochs) as i32);
        adam.set_lr(lr);
        let mut epoch_loss = 0.0;
        for _ in 0..cfg.batches_per_epoch {
            let batch = src.sample_with(cfg.batch_size, &mut rng)?;
            let mut grad = vec![0.0; m * dim];
            let mut batch_loss = 0.0;
            for y in &batch {
                let mut best = 0;
                let mut best_d2 = f64::INFINITY;
                for j in 0..m {
                    let row = &cw[j * dim..(j + 1) * dim];
                    let d: f64 = row.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best_d2 {
                        best_d2 = d;
                        best = j;
                    }
                }
                let p = c.point(best);
                let nx: f64 = StandardNormal.sample(&mut rng);
                let ny: f64 = StandardNormal.sample(&mut rng);
                let zt = c.detect(p[0] + sig_ax * nx, p[1] + sig_ax * ny);

                let row = &cw[zt * dim..(zt + 1) * dim];
                let mse: f64 = row
                    .iter()
                    .zip(y)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / dim as f64;
                batch_loss += cfg.alpha * mse;
                for d in 0..dim {
                    grad[zt * dim + d] += cfg.alpha * 2.0 * (cw[zt * dim + d] - y[d]) / dim as f64;
                }
                for &j in &neighborhoods[zt] {
                    let row = &cw[j * dim..(j + 1) * dim];
                    let mse: f64 = row
                        .iter()
                        .zip(y)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        / dim as f64;
                    batch_loss += cfg.gamma * mse;
                    for d in 0..dim {
                        grad[j * dim + d] +=
                            cfg.gamma * 2.0 * (cw[j * dim + d] - y[d]) / dim as f64;
                    }
                }
            }
            for g in grad.iter_mut() {
                *g /= cfg.batch_size as f64;
            }
            adam.step(&mut cw, &grad);
            batches_run += 1;
            epoch_loss += batch_loss / cfg.batch_size as f64;
        }
        let mean = epoch_loss / cfg.batches_per_epoch as f64;
        if !mean.is_finite() || cw.iter().any(|v| !v.is_finite()) {
            return Err(Error::FitDiverged(format!(
                "codebook training produced non-finite values in epoch {ep} \
                 (last finite epoch losses: {:?})",
                &loss_trace[loss_trace.len().saturating_sub(5)..]
            )));
        }
        loss_trace.push(mean);
    }

    let codewords: Vec<Vec<f64>> = (0..m).map(|j| cw[j * dim..(j + 1) * dim].to_vec()).collect();
    Ok((
        Codebook::new(codewords)?,
        TrainStats {
            loss_trace,
            batches_run,
            final_lr: lr,
        },
    ))
}

/// Quantized-index counts of `n` source samples — the usage histogram
/// feeding [`cr_reorder`] and (smoothed) [`estimate_prior`].
pub fn usage_histogram(cb: &Codebook, src: &FeatureSource, n: usize, seed: u64) -> Result<Vec<u64>> {
    let samples = src.sample(n, seed)?;
    let mut counts = vec![0u64; cb.len()];
    for y in &samples {
        counts[cb.quantize(y)?] += 1;
    }
    Ok(counts)
}

/// Add-1 (Laplace) smoothed empirical distribution of quantized indices.
pub fn estimate_prior(cb: &Codebook, src: &FeatureSource, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("prior estimation needs n >= 1".into()));
    }
    let counts = usage_histogram(cb, src, n, seed)?;
    let total = n as f64 + cb.len() as f64;
    Ok(counts.iter().map(|&c| (c as f64 + 1.0) / total).collect())
}

/// Post-hoc codeword reordering: chain codewords greedily by distance
/// (starting from the most-used one) and lay the chain along a boustrophedon
/// walk of the constellation grid, so consecutive — hence nearby — codewords
/// land on grid-adjacent symbols. The codewords themselves are unchanged;
/// only their symbol assignment (and `binding`) moves.
pub fn cr_reorder(cb: &Codebook, c: &Constellation, usage: &[u64]) -> Result<Codebook> {
    let m = cb.len();
    if m != c.order() || usage.len() != m {
        return Err(Error::InvalidArgument(
            "codebook, constellation, and usage sizes must agree".into(),
        ));
    }
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };

    let mut anchor = 0;
    for (j, &u) in usage.iter().enumerate() {
        if u > usage[anchor] {
            anchor = j;
        }
    }
    let mut order = vec![anchor];
    let mut used = vec![false; m];
    used[anchor] = true;
    while order.len() < m {
        let last = &cb.codewords[*order.last().unwrap()];
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for j in 0..m {
            if used[j] {
                continue;
            }
            let d = dist(&cb.codewords[j], last);
            if d < best_d {
                best_d = d;
                best = Some(j);
            }
        }
        let b = best.expect("unused codeword must exist");
        order.push(b);
        used[b] = true;
    }

    let side = c.side();
    let mut trav = Vec::with_capacity(m);
    for r in 0..side {
        if r % 2 == 0 {
            for col in 0..side {
                trav.push(r * side + col);
            }
        } else {
            for col in (0..side).rev() {
                trav.push(r * side + col);
            }
        }
    }

    let mut codewords = vec![Vec::new(); m];
    let mut binding = vec![0usize; m];
    for (pos, &sym) in trav.iter().enumerate() {
        codewords[sym] = cb.codewords[order[pos]].clone();
        binding[sym] = cb.binding[order[pos]];
    }
    Ok(Codebook {
        dim: cb.dim,
        codewords,
        binding,
    })
}

/// Topology diagnostics for a trained codebook.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyMetrics {
    /// `distance_rows[i][j]` = Euclidean codeword distance (heatmap row),
    /// zero on the diagonal.
    pub distance_rows: Vec<Vec<f64>>,
    /// Spearman rank correlation between grid Manhattan distance and
    /// codeword distance, averaged over reference codewords.
    pub spearman_mean: f64,
    /// Mean codeword distance over grid-neighbor pairs divided by the mean
    /// over non-neighbor pairs; < 1 means neighbors sit closer.
    pub neighbor_ratio: f64,
}

pub fn topology_metrics(cb: &Codebook, c: &Constellation) -> Result<TopologyMetrics> {
    let m = cb.len();
    if m != c.order() {
        return Err(Error::InvalidArgument(
            "codebook and constellation sizes must agree".into(),
        ));
    }
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut rows = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            rows[i][j] = dist(&cb.codewords[i], &cb.codewords[j]);
        }
    }

    let mut corr_sum = 0.0;
    for i in 0..m {
        let mut gd = Vec::with_capacity(m - 1);
        let mut cd = Vec::with_capacity(m - 1);
        for j in 0..m {
            if j == i {
                continue;
            }
            gd.push(c.grid_distance(i, j) as f64);
            cd.push(rows[i][j]);
        }
        corr_sum += stats::spearman(&gd, &cd);
    }

    let mut nb_sum = 0.0;
    let mut nb_n = 0usize;
    let mut far_sum = 0.0;
    let mut far_n = 0usize;
    for i in 0..m {
        let nbs = c.grid_neighbors(i);
        for j in 0..m {
            if j == i {
                continue;
            }
            if nbs.contains(&j) {
                nb_sum += rows[i][j];
                nb_n += 1;
            } else {
                far_sum += rows[i][j];
                far_n += 1;
            }
        }
    }
    Ok(TopologyMetrics {
        distance_rows: rows,
        spearman_mean: corr_sum / m as f64,
        neighbor_ratio: (nb_sum / nb_n as f64) / (far_sum / far_n as f64),
    })
}
