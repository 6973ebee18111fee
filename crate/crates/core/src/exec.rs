//! Indexed map helpers for the data-parallel inner loops.
//!
//! With the `parallel` feature (the default) [`map_indexed`] runs on the
//! rayon pool; without it the same call compiles to a plain iterator. Results
//! come back in index order either way, so callers stay deterministic no
//! matter which path runs or how many threads the pool has.

#[cfg(feature = "parallel")]
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

/// Always-sequential twin of [`map_indexed`]. Kept callable when the
/// `parallel` feature is on so the bench suite can compare both paths within
/// one build.
pub fn map_indexed_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let f = |i: usize| (i as f64).sqrt() * 3.0 - 1.0;
        let par: Vec<f64> = map_indexed(1000, f);
        let seq: Vec<f64> = map_indexed_seq(1000, f);
        assert_eq!(par.len(), seq.len());
        for (a, b) in par.iter().zip(&seq) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
