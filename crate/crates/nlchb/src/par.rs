//! Thin wrappers over the data-parallel loops.
//!
//! With the `parallel` feature (default) these fan out over the rayon pool;
//! without it they run sequentially. Reductions always combine per-row
//! partial sums in row order, so results are bit-identical across thread
//! counts and across both builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Apply `f(row_index, row)` to every contiguous chunk of length `row_len`.
pub fn for_each_row_mut<T: Send>(
    data: &mut [T],
    row_len: usize,
    f: impl Fn(usize, &mut [T]) + Sync + Send,
) {
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(row_len).enumerate().for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(row_len).enumerate().for_each(|(i, row)| f(i, row));
    }
}

/// Deterministic reduction: evaluate `f(i)` for `i in 0..n` (in parallel),
/// then sum the per-index results in index order.
pub fn sum_indexed(n: usize, f: impl Fn(usize) -> f64 + Sync + Send) -> f64 {
    #[cfg(feature = "parallel")]
    let parts: Vec<f64> = (0..n).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<f64> = (0..n).map(f).collect();
    parts.iter().sum()
}
