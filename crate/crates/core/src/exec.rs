//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper preserves input order in its output, so results never depend
//! on how work was scheduled. With the `parallel` feature disabled,
//! [`Execution::Parallel`] silently runs sequentially.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this build can actually run work on several threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// `f(i)` for `i in 0..n`, collected in index order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// `f(&item)` for every item, collected in input order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// `f(i, &mut item)` for every item, collected in input order.
    pub fn map_mut<T, R, F>(self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(usize, &mut T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter_mut().enumerate().map(|(i, t)| f(i, t)).collect();
        }
        items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect()
    }

    /// Runs `f(chunk_index, chunk)` over fixed-size chunks of `items`.
    ///
    /// Chunk boundaries depend only on `chunk_len`, never on the thread pool,
    /// which keeps per-chunk reductions bit-reproducible.
    pub fn map_chunks<T, R, F>(self, items: &[T], chunk_len: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &[T]) -> R + Sync + Send,
    {
        let chunk_len = chunk_len.max(1);
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items
                .par_chunks(chunk_len)
                .enumerate()
                .map(|(i, c)| f(i, c))
                .collect();
        }
        items
            .chunks(chunk_len)
            .enumerate()
            .map(|(i, c)| f(i, c))
            .collect()
    }
}
