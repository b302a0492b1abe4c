//! Deterministic execution primitives: derived RNG substreams and
//! chunk-parallel mapping.
//!
//! Reproducibility contract: every stochastic computation in this crate is
//! split into *logical chunks* whose boundaries depend only on the problem
//! size (never on the worker count), each chunk draws from its own
//! counter-derived ChaCha stream, and chunk results are combined either in
//! chunk order or with exactly associative operations (integer counts).
//! Consequently a fixed seed produces bit-identical output whether the work
//! runs on one thread, many threads, or with the `parallel` feature compiled
//! out entirely.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of work items per logical chunk used by the samplers in this
/// crate. Fixed: changing it would change which stream serves which item.
pub const CHUNK: usize = 4096;

/// An independent random stream for one logical work unit.
///
/// ChaCha supports 2^64 independent streams per seed; deriving by
/// `(seed, stream)` gives parallel workers non-overlapping randomness
/// without any coordination.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Map `f` over chunk indices `0..n_chunks`, in parallel when the
/// `parallel` feature is enabled. Results come back in chunk order, so
/// order-sensitive folds over the returned vector are deterministic.
pub fn map_chunks<T, F>(n_chunks: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync + Send,
    T: Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n_chunks).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n_chunks).map(f).collect()
    }
}

/// Always-sequential twin of [`map_chunks`]. Exists so the bench suite can
/// compare the two paths on identical work, and as the substitution target
/// when the `parallel` feature is disabled.
pub fn map_chunks_sequential<T, F>(n_chunks: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n_chunks).map(f).collect()
}

/// Cap the global worker pool at `n` threads. Call at most once, before any
/// parallel work; later calls fail harmlessly. A no-op without the
/// `parallel` feature. Never affects results, only wall time.
pub fn configure_threads(n: usize) -> std::result::Result<(), String> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        Ok(())
    }
}

/// Chunk boundaries `(start, len)` covering `0..n` in [`CHUNK`]-sized runs.
pub fn chunk_ranges(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n.div_ceil(CHUNK));
    let mut start = 0;
    while start < n {
        let len = CHUNK.min(n - start);
        out.push((start, len));
        start += len;
    }
    out
}
