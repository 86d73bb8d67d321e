//! Execution strategy for data-parallel loops.
//!
//! Every parallel loop in the crate is an order-preserving map over an index
//! range whose per-item work depends only on the index, so switching strategy
//! never changes results.

use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon work stealing. Falls back to sequential when the crate is built
    /// without the `parallel` feature.
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
    /// Maps `f` over `range`, returning results in index order.
    pub fn map<R, F>(self, range: Range<usize>, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            Execution::Sequential => range.map(f).collect(),
            Execution::Parallel => par_map(range, 1, f),
        }
    }

    /// Like [`Execution::map`], but never hands a worker fewer than
    /// `min_len` consecutive indices. Use for items that cost microseconds.
    pub fn map_chunked<R, F>(self, range: Range<usize>, min_len: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            Execution::Sequential => range.map(f).collect(),
            Execution::Parallel => par_map(range, min_len.max(1), f),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<R, F>(range: Range<usize>, min_len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    use rayon::prelude::*;
    range.into_par_iter().with_min_len(min_len).map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<R, F>(range: Range<usize>, _min_len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    range.map(f).collect()
}

/// Runs `f` on a pool capped at `threads` workers (`None` = rayon default).
#[cfg(feature = "parallel")]
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        None => f(),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<R: Send>(_threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree() {
        let seq = Execution::Sequential.map(0..1000, |i| i * i % 7);
        let par = Execution::Parallel.map(0..1000, |i| i * i % 7);
        assert_eq!(seq, par);
        assert_eq!(seq, Execution::Parallel.map_chunked(0..1000, 16, |i| i * i % 7));
    }

    #[test]
    fn thread_cap_does_not_change_results() {
        let a = with_threads(Some(1), || Execution::Parallel.map(0..64, |i| i as f64 * 0.5));
        let b = with_threads(Some(4), || Execution::Parallel.map(0..64, |i| i as f64 * 0.5));
        assert_eq!(a, b);
    }
}
