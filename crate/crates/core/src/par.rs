//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) these fan out over rayon's pool;
//! without it they run sequentially. Reductions always split the input into
//! fixed-size chunks and add the chunk partials left to right, so a sum is
//! bit-identical whatever the thread count or feature selection.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Elements per reduction chunk. Part of the numeric contract: changing it
/// changes the low bits of every likelihood sum.
pub const CHUNK: usize = 512;

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Runs `f` on a pool with `threads` workers, 0 meaning one per core
/// (sequential builds ignore the count).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

/// Order-preserving map over a slice.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
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

/// Order-preserving map over `0..n`.
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Deterministic sum of `f` over `items`.
pub fn sum_by<T, F>(items: &[T], f: F) -> f64
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync + Send,
{
    let partial = |chunk: &[T]| chunk.iter().map(&f).fold(0.0, |acc, x| acc + x);
    #[cfg(feature = "parallel")]
    let partials: Vec<f64> = items.par_chunks(CHUNK).map(partial).collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<f64> = items.chunks(CHUNK).map(partial).collect();
    partials.into_iter().fold(0.0, |acc, x| acc + x)
}

/// Deterministic vector-valued sum. `f` adds one element's contribution into
/// the accumulator it is handed.
pub fn sum_into<T, F>(items: &[T], dim: usize, f: F) -> Vec<f64>
where
    T: Sync,
    F: Fn(&T, &mut [f64]) + Sync + Send,
{
    let partial = |chunk: &[T]| {
        let mut acc = vec![0.0; dim];
        for item in chunk {
            f(item, &mut acc);
        }
        acc
    };
    #[cfg(feature = "parallel")]
    let partials: Vec<Vec<f64>> = items.par_chunks(CHUNK).map(partial).collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<Vec<f64>> = items.chunks(CHUNK).map(partial).collect();
    let mut total = vec![0.0; dim];
    for p in partials {
        for (t, x) in total.iter_mut().zip(p) {
            *t += x;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_matches_across_thread_counts() {
        let xs: Vec<f64> = (0..10_000)
            .map(|i| (i as f64).sin() * 1e-3 + 1.0 / (i as f64 + 1.0))
            .collect();
        let one = with_threads(1, || sum_by(&xs, |x| *x));
        let many = with_threads(7, || sum_by(&xs, |x| *x));
        assert_eq!(one.to_bits(), many.to_bits());
    }

    #[test]
    fn vector_sum_and_map_preserve_order() {
        let xs: Vec<usize> = (0..2000).collect();
        let s = sum_into(&xs, 2, |x, acc| {
            acc[0] += *x as f64;
            acc[1] += 1.0;
        });
        assert_eq!(s, vec![1999.0 * 2000.0 / 2.0, 2000.0]);
        let m = map_range(5, |i| i * i);
        assert_eq!(m, vec![0, 1, 4, 9, 16]);
    }
}
