//! Data-parallel execution with a sequential fallback.
//!
//! Every parallel stage in the crate goes through [`Execution::map`], which
//! collects results in input order. Reductions over the mapped values are
//! always performed sequentially by the caller, so a parallel run produces
//! bit-identical output to a sequential one.
//!
//! The rayon backend is compiled in with the `parallel` feature (on by
//! default). Without it, [`Execution::Parallel`] degrades to a plain loop.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
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
    /// Whether work will actually be spread across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Apply `f` to every index in `0..len`, returning results in index order.
    pub fn map<R, F>(self, len: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return (0..len).into_par_iter().map(f).collect();
        }
        (0..len).map(f).collect()
    }

    /// Like [`Execution::map`] but over a slice.
    pub fn map_slice<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        self.map(items.len(), |i| f(&items[i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_preserve_order() {
        let seq = Execution::Sequential.map(1000, |i| i * i);
        let par = Execution::Parallel.map(1000, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq[31], 961);
    }

    #[test]
    fn map_slice_matches_iter() {
        let xs: Vec<f64> = (0..257).map(|i| i as f64 * 0.5).collect();
        let out = Execution::Parallel.map_slice(&xs, |x| x.sqrt());
        let expect: Vec<f64> = xs.iter().map(|x| x.sqrt()).collect();
        assert_eq!(out, expect);
    }
}
