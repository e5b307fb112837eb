//! Data-parallel helpers with a sequential fallback.
//!
//! Built with the `parallel` feature (default), inner loops fan out over a
//! rayon pool sized by the `PSEUDOISP_THREADS` environment variable; without
//! the feature everything runs sequentially. Parallelism can also be switched
//! off at runtime (used by the benchmark suite to compare both paths in one
//! binary). Work items are always collected in index order so results are
//! bit-identical regardless of the execution mode.

use std::sync::atomic::{AtomicBool, Ordering};

static RUNTIME_PARALLEL: AtomicBool = AtomicBool::new(true);

/// Runtime switch, only meaningful when built with the `parallel` feature.
pub fn set_parallel(enabled: bool) {
    RUNTIME_PARALLEL.store(enabled, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && RUNTIME_PARALLEL.load(Ordering::Relaxed)
}

#[cfg(not(feature = "parallel"))]
pub fn init_pool() {}

#[cfg(feature = "parallel")]
pub fn init_pool() {
    use std::sync::Once;
    static INIT: Once = Once::new();
    INIT.call_once(|| {
        if let Ok(v) = std::env::var("PSEUDOISP_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                if n >= 1 {
                    // Ignore failure: a global pool may already exist.
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    });
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        if parallel_enabled() {
            init_pool();
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, returning results in input order.
pub fn map_slice<A: Sync, T: Send>(items: &[A], f: impl Fn(&A) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        if parallel_enabled() {
            init_pool();
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
    }
    items.iter().map(f).collect()
}
