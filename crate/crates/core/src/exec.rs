//! Data-parallel execution helpers.
//!
//! With the `parallel` feature (default), [`map_collect`] fans work out over
//! rayon's global pool; without it, the same call runs on plain iterators.
//! Both paths preserve input order, so callers get identical results either
//! way — parallelism never changes output, only wall time. [`map_collect_seq`]
//! is always sequential and exists so benchmarks can compare the two paths in
//! a single build.

/// Order-preserving parallel map (sequential when `parallel` is disabled).
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Order-preserving map over `0..n` (sequential when `parallel` is disabled).
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential reference path, kept available in all builds for benchmarks
/// and for determinism cross-checks against [`map_collect`].
pub fn map_collect_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Sequential counterpart of [`map_range`].
pub fn map_range_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let xs: Vec<u64> = (0..10_000).collect();
        let par = map_collect(&xs, |x| x.wrapping_mul(2654435761).rotate_left(7));
        let seq = map_collect_seq(&xs, |x| x.wrapping_mul(2654435761).rotate_left(7));
        assert_eq!(par, seq);
    }

    #[test]
    fn range_variants_agree() {
        let par = map_range(513, |i| i * i);
        let seq = map_range_seq(513, |i| i * i);
        assert_eq!(par, seq);
    }
}
