//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature, [`map_collect`] fans out over rayon's
//! global pool (or whichever pool the caller installed). Without it the
//! same call is a plain iterator map. Output order always matches input
//! order, so results are identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Whether this build routes [`map_collect`] through rayon.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Always-sequential twin of [`map_collect`]; used by benchmarks and for
/// debugging with a single worker.
pub fn map_collect_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Sum of `f` over `items`, parallel when available. Summation order is
/// fixed by collecting first so floating point results do not depend on
/// thread scheduling.
pub fn sum_by<T, F>(items: &[T], f: F) -> f64
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync + Send,
{
    map_collect(items, f).into_iter().sum()
}
