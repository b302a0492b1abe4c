//! Symbol-transition modeling and error correction for square-QAM links.
//!
//! The crate builds up a complete receiver-side correction stack in five layers:
//!
//! 1. [`constellation`] / [`schedule`] — the square-QAM geometry (decision
//!    regions, grid neighborhoods) and a sigmoid SNR schedule that maps
//!    discrete step indices to cumulative noise variances.
//! 2. [`truth`] — ground-truth symbol transition matrices under AWGN:
//!    analytic point-to-region kernels, Monte-Carlo region-to-region
//!    kernels, a Frobenius diagnostic showing the detected-symbol process
//!    is *not* Markov, and a linear-schedule heuristic baseline.
//! 3. [`fit`] — a Markov-enforced surrogate: block coordinate descent on a
//!    shared-eigenbasis factorization `V·D(t)·V⁻¹` fitted to the truth
//!    matrices at subsampled steps, monotone interpolation of the diagonal
//!    to every step, and materialization into cumulative and single-step
//!    row-stochastic matrices.
//! 4. [`diffusion`] / [`denoiser`] — discrete-diffusion mechanics on symbol
//!    sequences (forward corruption, exact posterior, reverse kernel with a
//!    pluggable denoiser, loss estimates) and the exact Bayesian denoiser.
//! 5. [`codebook`] / [`simulator`] — SOM-regularized VQ codebooks trained on
//!    synthetic Gaussian-mixture features, and the end-to-end pipeline
//!    (quantize → modulate → AWGN → detect → correct → dequantize) with
//!    SER/MSE metrics and SNR sweeps.
//!
//! Everything stochastic is driven by explicit seeds through counter-derived
//! ChaCha substreams ([`exec`]), so results are bit-identical for a fixed
//! seed regardless of thread count or the `parallel` feature.

pub mod artifact;
pub mod codebook;
pub mod constellation;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod exec;
pub mod fit;
mod mat;
mod optim;
pub mod pchip;
pub mod schedule;
pub mod simulator;
pub mod stats;
pub mod truth;

pub use constellation::Constellation;
pub use error::{Error, Result};
pub use schedule::NoiseSchedule;

/// Re-exported so downstream crates can name the matrix types appearing in
/// this crate's public signatures without pinning their own copy.
pub use nalgebra;
