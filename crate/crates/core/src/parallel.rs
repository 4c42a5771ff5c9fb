//! Data-parallel map with a sequential fallback.
//!
//! Results are always collected in input order and reduced sequentially, so
//! the worker count can never change an output bit. Building without the
//! `parallel` feature removes the rayon dependency entirely; `workers` is
//! then ignored and everything runs on the calling thread.

/// Sequential reference implementation.
pub fn seq_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    seq_map(items, f)
}

/// Run `f` on a pool of `workers` threads; `workers == 1` stays on the
/// calling thread and is the deterministic reference everything else must
/// match.
#[cfg(feature = "parallel")]
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    if workers <= 1 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("failed to build worker pool");
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<R: Send>(_workers: usize, f: impl FnOnce() -> R + Send) -> R {
    f()
}

/// Map `f` over `items` inside a worker pool of the given size.
pub fn map_with_workers<T: Sync, U: Send>(
    workers: usize,
    items: &[T],
    f: impl Fn(&T) -> U + Sync + Send,
) -> Vec<U> {
    if workers <= 1 {
        seq_map(items, &f)
    } else {
        with_workers(workers, || par_map(items, &f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_preserves_input_order() {
        let items: Vec<u64> = (0..500).collect();
        let seq = seq_map(&items, |v| v * 3 + 1);
        let par = par_map(&items, |v| v * 3 + 1);
        assert_eq!(seq, par);
    }

    #[test]
    fn worker_count_does_not_change_float_reductions() {
        let items: Vec<f32> = (0..1000).map(|i| (i as f32).sin()).collect();
        let run = |w: usize| -> f32 {
            map_with_workers(w, &items, |v| v.exp())
                .iter()
                .fold(0.0f32, |acc, v| acc + v)
        };
        let one = run(1).to_bits();
        let four = run(4).to_bits();
        assert_eq!(one, four);
    }
}
