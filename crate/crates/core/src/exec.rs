//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the per-vertex loops run on the rayon pool,
//! otherwise they run in order. Every helper produces bit-identical results in
//! both modes: maps are gathers with no cross-item accumulation, and
//! reductions sum fixed-size chunks and then combine the partials in order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length of the deterministic reductions.
pub const REDUCE_CHUNK: usize = 1024;

/// Evaluate `f(i)` for `i in 0..n` and collect the results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
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

/// Map over a slice, preserving order.
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
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

/// Deterministic sum of `f(i)` for `i in 0..n`.
pub fn sum_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    let partial = |c: usize| {
        let lo = c * REDUCE_CHUNK;
        let hi = (lo + REDUCE_CHUNK).min(n);
        (lo..hi).fold(0.0, |acc, i| acc + f(i))
    };
    #[cfg(feature = "parallel")]
    let partials: Vec<f64> = (0..chunks).into_par_iter().map(partial).collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<f64> = (0..chunks).map(partial).collect();
    partials.into_iter().fold(0.0, |acc, s| acc + s)
}

/// Deterministic maximum of `f(i)`; returns `0.0` for `n == 0`.
pub fn max_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).reduce(|| 0.0, f64::max)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).fold(0.0, f64::max)
    }
}

/// Whether the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_matches_sequential_chunked_order() {
        let n: usize = 5000;
        let f = |i: usize| ((i as f64) * 0.37).sin() * 1e-3 + 1.0 / (1.0 + i as f64);
        let expected = (0..n.div_ceil(REDUCE_CHUNK))
            .map(|c| {
                (c * REDUCE_CHUNK..((c + 1) * REDUCE_CHUNK).min(n)).fold(0.0, |a, i| a + f(i))
            })
            .fold(0.0, |a, s| a + s);
        assert_eq!(sum_indexed(n, f).to_bits(), expected.to_bits());
    }

    #[test]
    fn map_keeps_order() {
        let v = map_indexed(100, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
        assert_eq!(max_indexed(0, |_| 1.0), 0.0);
    }
}
