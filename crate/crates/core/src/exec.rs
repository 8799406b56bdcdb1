//! Sequential or data-parallel execution of independent work items.
//!
//! Results are always collected in index order, so reductions over them are
//! identical whichever mode produced them.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    /// Uses the rayon global pool when the `parallel` feature is enabled and
    /// falls back to sequential execution otherwise.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// True if work will actually be spread over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `(0..n).map(f)` in the chosen mode, in index order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Execution::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_preserve_order() {
        let f = |i: usize| (i as f64).sqrt();
        let a = map_indexed(Execution::Sequential, 1000, f);
        let b = map_indexed(Execution::Parallel, 1000, f);
        assert_eq!(a, b);
        assert_eq!(a[9], 3.0);
    }
}
