//! Index-ordered parallel helpers.
//!
//! Every function here is deterministic: outputs are collected in index
//! order, so results are identical whether the `rayon` feature is enabled
//! or not, and independent of the worker count. The sequential versions
//! (`seq_*`) are always compiled; they back the dispatching versions when
//! the `rayon` feature is off and serve as the baseline in benchmarks.

/// Sequential map over `0..n`, collecting in order.
pub fn seq_map<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Map over `0..n`, in parallel when the `rayon` feature is enabled.
#[cfg(feature = "rayon")]
pub fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Map over `0..n`, in parallel when the `rayon` feature is enabled.
#[cfg(not(feature = "rayon"))]
pub fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    seq_map(n, f)
}

/// Sequential in-place update of equally sized row chunks.
pub fn seq_for_chunks(out: &mut [f64], chunk: usize, f: impl Fn(usize, &mut [f64])) {
    for (i, c) in out.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// In-place update of equally sized row chunks, parallel when enabled.
/// `f(i, chunk)` receives the chunk index and the chunk itself.
#[cfg(feature = "rayon")]
pub fn par_for_chunks(out: &mut [f64], chunk: usize, f: impl Fn(usize, &mut [f64]) + Sync + Send) {
    use rayon::prelude::*;
    out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// In-place update of equally sized row chunks, parallel when enabled.
#[cfg(not(feature = "rayon"))]
pub fn par_for_chunks(out: &mut [f64], chunk: usize, f: impl Fn(usize, &mut [f64]) + Sync + Send) {
    seq_for_chunks(out, chunk, f);
}

/// Runs both closures, possibly on separate workers, and returns both results.
#[cfg(feature = "rayon")]
pub fn join<A: Send, B: Send>(
    a: impl FnOnce() -> A + Send,
    b: impl FnOnce() -> B + Send,
) -> (A, B) {
    rayon::join(a, b)
}

/// Runs both closures sequentially and returns both results.
#[cfg(not(feature = "rayon"))]
pub fn join<A: Send, B: Send>(
    a: impl FnOnce() -> A + Send,
    b: impl FnOnce() -> B + Send,
) -> (A, B) {
    (a(), b())
}

/// Caps the global worker pool. Returns the effective worker count.
/// A no-op (returning 1) without the `rayon` feature; calling it twice
/// keeps the first configuration.
#[cfg(feature = "rayon")]
pub fn configure_workers(threads: Option<usize>) -> usize {
    if let Some(t) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    rayon::current_num_threads()
}

/// Caps the global worker pool. Returns the effective worker count.
#[cfg(not(feature = "rayon"))]
pub fn configure_workers(_threads: Option<usize>) -> usize {
    1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_matches_seq_map() {
        let f = |i: usize| (i as f64).sqrt() + i as f64;
        let a = seq_map(1000, f);
        let b = par_map(1000, f);
        assert_eq!(a, b);
    }

    #[test]
    fn chunk_update_matches_sequential() {
        let f = |i: usize, c: &mut [f64]| {
            for (j, x) in c.iter_mut().enumerate() {
                *x = (i * 31 + j) as f64;
            }
        };
        let mut a = vec![0.0; 64 * 7];
        let mut b = vec![0.0; 64 * 7];
        seq_for_chunks(&mut a, 7, f);
        par_for_chunks(&mut b, 7, f);
        assert_eq!(a, b);
    }
}
