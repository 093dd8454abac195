//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the maps and reductions run on rayon; without
//! it (or while [`force_sequential`] is set) they run on the calling thread.
//! Reductions always split work into fixed-size chunks and sum the chunk
//! partials in chunk order, so both paths produce bit-identical results.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Route every helper in this module through the sequential path.
pub fn force_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::SeqCst);
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

/// `(0..n).map(f).collect()`, possibly in parallel. Output order is index order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Map over a slice, possibly in parallel.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Sum `dim`-vectors produced by `fill(range, acc)` over `0..n`, where each
/// call accumulates the contributions of one chunk of indices into `acc`.
/// Chunk boundaries depend only on `chunk`, never on the thread count.
pub fn chunked_sum<F>(n: usize, chunk: usize, dim: usize, fill: F) -> Vec<f64>
where
    F: Fn(std::ops::Range<usize>, &mut [f64]) + Sync + Send,
{
    let chunk = chunk.max(1);
    let n_chunks = n.div_ceil(chunk);
    let partials = map_range(n_chunks, |c| {
        let mut acc = vec![0.0; dim];
        let lo = c * chunk;
        fill(lo..(lo + chunk).min(n), &mut acc);
        acc
    });
    let mut total = vec![0.0; dim];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}
