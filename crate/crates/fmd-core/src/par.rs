//! Deterministic data-parallel reductions.
//!
//! Work is split into fixed-size chunks that do not depend on the thread
//! count, and partial results are combined in chunk order. Reruns therefore
//! agree bit for bit whether rayon uses one thread or many.

use rayon::prelude::*;
use std::ops::Range;

pub const CHUNK: usize = 2048;

fn chunks(n: usize) -> impl IndexedParallelIterator<Item = Range<usize>> {
    (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(move |c| c * CHUNK..((c + 1) * CHUNK).min(n))
}

/// Sum of `f` over chunked index ranges covering `0..n`.
pub fn sum<F>(n: usize, f: F) -> f64
where
    F: Fn(Range<usize>) -> f64 + Sync + Send,
{
    let parts: Vec<f64> = chunks(n).map(f).collect();
    parts.iter().sum()
}

/// Sum of several scalars at once; `f` returns `width` partial sums per chunk.
pub fn sum_vec<F>(n: usize, width: usize, f: F) -> Vec<f64>
where
    F: Fn(Range<usize>, &mut [f64]) + Sync + Send,
{
    let parts: Vec<Vec<f64>> = chunks(n)
        .map(|r| {
            let mut acc = vec![0.0; width];
            f(r, &mut acc);
            acc
        })
        .collect();
    let mut out = vec![0.0; width];
    for p in parts {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

/// Elementwise map into a fresh vector, parallel over chunks.
pub fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().with_min_len(CHUNK).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sums_do_not_depend_on_thread_count() {
        let n = 100_003;
        let f = |r: Range<usize>| r.map(|i| ((i as f64) * 0.37).sin() * 1e-3).sum::<f64>();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| sum(n, f));
        let b = four.install(|| sum(n, f));
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
