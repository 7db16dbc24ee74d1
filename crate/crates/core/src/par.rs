//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper maps over an index range and collects in index order, so
//! the two modes produce bit-identical results; reductions are done
//! sequentially by the callers.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    Parallel,
}

impl Default for Parallelism {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Parallelism::Parallel
        } else {
            Parallelism::Sequential
        }
    }
}

/// `(0..n).map(f).collect()`, fanned out over the rayon pool when enabled.
pub fn map_range<T, F>(mode: Parallelism, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode == Parallelism::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Like [`map_range`] over the items of a slice.
pub fn map_slice<I, T, F>(mode: Parallelism, items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    map_range(mode, items.len(), |i| f(&items[i]))
}
