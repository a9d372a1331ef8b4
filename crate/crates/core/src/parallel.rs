//! Data-parallel helpers with a runtime sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over the rayon
//! pool unless [`set_execution`] selects [`Execution::Sequential`]. Results
//! are always collected in input order, so every caller produces identical
//! output under either policy.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Parallel,
    Sequential,
}

static MODE: AtomicU8 = AtomicU8::new(0);

pub fn set_execution(mode: Execution) {
    MODE.store(
        match mode {
            Execution::Parallel => 0,
            Execution::Sequential => 1,
        },
        Ordering::Relaxed,
    );
}

pub fn execution() -> Execution {
    if cfg!(feature = "parallel") && MODE.load(Ordering::Relaxed) == 0 {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

/// Maps `f` over `0..n` and collects in index order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if execution() == Execution::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Maps `f` over a slice and collects in order.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_range(items.len(), |i| f(&items[i]))
}

/// Runs `f` on each disjoint mutable chunk of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if execution() == Execution::Parallel {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Sets the global rayon pool size from `FOACOUNT_WORKERS`, if present.
pub fn init_workers_from_env() {
    #[cfg(feature = "parallel")]
    if let Some(n) = std::env::var("FOACOUNT_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_under_both_policies() {
        let par = map_range(100, |i| i * i);
        set_execution(Execution::Sequential);
        let seq = map_range(100, |i| i * i);
        set_execution(Execution::Parallel);
        assert_eq!(par, seq);
        assert_eq!(seq[7], 49);
    }
}
