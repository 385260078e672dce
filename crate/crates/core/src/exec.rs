//! Data-parallel map with a sequential fallback.
//!
//! Every parallel helper returns its results in index order, and callers
//! reduce them serially, so the numbers produced are bit-identical whether
//! or not the `parallel` feature is enabled or switched on at runtime.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Work below this many items is always run sequentially.
const MIN_PARALLEL_LEN: usize = 64;

/// Runtime switch between the parallel and sequential paths. Has no effect
/// when the crate is built without the `parallel` feature.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

/// Caps the global worker pool at `threads`. Returns `false` if the pool was
/// already initialized (or parallelism is compiled out).
pub fn init_thread_pool(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        false
    }
}

/// Applies `f` to `0..n`, returning the results in index order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if n >= MIN_PARALLEL_LEN && parallel_enabled() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Like [`map_range`] but always eligible for parallel execution; used for a
/// handful of expensive independent jobs (solver restarts, probes).
pub fn map_jobs<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if n > 1 && parallel_enabled() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Sum of `f(i)` for `i in 0..n`, accumulated in index order.
pub fn sum_range<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    map_range(n, f).into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_sums_agree_bitwise() {
        let f = |i: usize| ((i as f64) * 0.37).sin() / (1.0 + i as f64);
        set_parallel(true);
        let a = sum_range(10_000, f);
        set_parallel(false);
        let b = sum_range(10_000, f);
        set_parallel(true);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn map_preserves_order() {
        let v = map_range(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
        let w = map_jobs(5, |i| i + 1);
        assert_eq!(w, vec![1, 2, 3, 4, 5]);
    }
}
