//! Sequential / data-parallel switch for the batch inner loops.
//!
//! Callers pass a runtime flag; the `parallel` cargo feature decides whether
//! rayon is compiled in at all. Results always come back in input order, so
//! the two paths are interchangeable bit-for-bit.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, preserving input order in the output.
pub(crate) fn map_ordered<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return items.par_iter().map(&f).collect();
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

/// True when this build can actually run the parallel path.
pub(crate) fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}
