//! Execution helpers for the data-parallel inner loops.
//!
//! Every hot loop in the pipeline is a pure per-index map; no reduction ever
//! crosses rows in a data-dependent order, so results are bit-identical for
//! any worker count and for the sequential fallback build.

/// Sequential map over `0..n`. Always compiled; benchmarks use it as the
/// baseline against the rayon path.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync,
    T: Send,
{
    (0..n).map(f).collect()
}

/// Map over `0..n`, in parallel when the `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync + Send,
    T: Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync,
    T: Send,
{
    map_indexed_seq(n, f)
}
