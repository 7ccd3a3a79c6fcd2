//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) these run on the rayon pool;
//! without it they are plain sequential loops. Output order always matches
//! input order, and [`chunked_sum`] reduces in a fixed chunk layout, so
//! results are bitwise identical in both builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of items folded sequentially before partial sums are combined.
pub const REDUCE_CHUNK: usize = 4;

#[cfg(feature = "parallel")]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_slice<A, T, F>(items: &[A], f: F) -> Vec<T>
where
    A: Sync,
    T: Send,
    F: Fn(&A) -> T + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<A, T, F>(items: &[A], f: F) -> Vec<T>
where
    A: Sync,
    T: Send,
    F: Fn(&A) -> T + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Sums `n` vectors of length `len` produced by `f`, where `f(i, acc)` adds
/// item `i`'s contribution into `acc` and returns a scalar side value
/// (typically a loss) that is summed alongside.
pub fn chunked_sum<F>(n: usize, len: usize, f: F) -> (Vec<f64>, f64)
where
    F: Fn(usize, &mut [f64]) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    let partials = map_range(chunks, |c| {
        let mut acc = vec![0.0; len];
        let mut side = 0.0;
        for i in c * REDUCE_CHUNK..((c + 1) * REDUCE_CHUNK).min(n) {
            side += f(i, &mut acc);
        }
        (acc, side)
    });
    let mut total = vec![0.0; len];
    let mut side = 0.0;
    for (acc, s) in partials {
        for (t, a) in total.iter_mut().zip(&acc) {
            *t += a;
        }
        side += s;
    }
    (total, side)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let v = map_range(100, |i| i * 2);
        assert_eq!(v, (0..100).map(|i| i * 2).collect::<Vec<_>>());
    }

    #[test]
    fn chunked_sum_matches_sequential() {
        let (acc, side) = chunked_sum(10, 3, |i, acc| {
            acc[i % 3] += i as f64;
            1.0
        });
        assert_eq!(side, 10.0);
        assert_eq!(acc, vec![18.0, 12.0, 15.0]);
    }
}
