//! Ordered data-parallel map with a sequential fallback.
//!
//! Results always come back in index order, so reductions performed on them
//! afterwards are independent of how the work was scheduled.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Executor {
    /// Rayon work stealing when the `parallel` feature is enabled, otherwise
    /// identical to `Sequential`.
    #[default]
    Parallel,
    Sequential,
}

impl Executor {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Executor::Parallel
    }
}

/// Evaluates `f(0..n)` and returns the results in index order.
pub fn map_indexed<R, F>(n: usize, exec: Executor, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Executor::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Like [`map_indexed`] but stops at the first error in index order.
pub fn try_map_indexed<R, E, F>(n: usize, exec: Executor, f: F) -> Result<Vec<R>, E>
where
    R: Send,
    E: Send,
    F: Fn(usize) -> Result<R, E> + Sync + Send,
{
    map_indexed(n, exec, f).into_iter().collect()
}
