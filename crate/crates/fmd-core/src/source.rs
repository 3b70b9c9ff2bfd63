//! Sample sources. A source hands out batches addressed by a random
//! [`Stream`], so any consumer can reproduce exactly the batch it saw.

use crate::model::{HyperplaneModel, MlrBatch, MlrModel, Vector, VecBatch};
use crate::rng::Stream;
use rand::Rng;
use std::sync::atomic::{AtomicU64, Ordering};

pub trait MlrSource: Sync {
    fn dim(&self) -> usize;
    fn draw(&self, n: usize, stream: Stream) -> MlrBatch;
}

pub trait VectorSource: Sync {
    fn dim(&self) -> usize;
    fn draw(&self, n: usize, stream: Stream) -> VecBatch;
}

impl MlrSource for MlrModel {
    fn dim(&self) -> usize {
        self.d()
    }
    fn draw(&self, n: usize, stream: Stream) -> MlrBatch {
        MlrModel::draw(self, n, stream)
    }
}

impl VectorSource for HyperplaneModel {
    fn dim(&self) -> usize {
        self.d()
    }
    fn draw(&self, n: usize, stream: Stream) -> VecBatch {
        HyperplaneModel::draw(self, n, stream)
    }
}

impl<S: MlrSource + ?Sized> MlrSource for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn draw(&self, n: usize, stream: Stream) -> MlrBatch {
        (**self).draw(n, stream)
    }
}

impl<S: VectorSource + ?Sized> VectorSource for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn draw(&self, n: usize, stream: Stream) -> VecBatch {
        (**self).draw(n, stream)
    }
}

/// Resamples rows of a fixed data set with replacement.
pub struct MlrDataset {
    pub batch: MlrBatch,
}

impl MlrSource for MlrDataset {
    fn dim(&self) -> usize {
        self.batch.d
    }
    fn draw(&self, n: usize, stream: Stream) -> MlrBatch {
        let m = self.batch.len();
        let mut rng = stream.rng();
        let mut out = MlrBatch { d: self.batch.d, x: Vec::with_capacity(n * self.batch.d), y: Vec::with_capacity(n) };
        if m == 0 {
            return out;
        }
        for _ in 0..n {
            let j = rng.random_range(0..m);
            out.x.extend_from_slice(self.batch.row(j));
            out.y.push(self.batch.y[j]);
        }
        out
    }
}

/// Resamples rows of a fixed set of vectors with replacement.
pub struct VecDataset {
    pub batch: VecBatch,
}

impl VectorSource for VecDataset {
    fn dim(&self) -> usize {
        self.batch.d
    }
    fn draw(&self, n: usize, stream: Stream) -> VecBatch {
        let m = self.batch.len();
        let mut rng = stream.rng();
        let mut out = VecBatch { d: self.batch.d, x: Vec::with_capacity(n * self.batch.d) };
        if m == 0 {
            return out;
        }
        for _ in 0..n {
            out.x.extend_from_slice(self.batch.row(rng.random_range(0..m)));
        }
        out
    }
}

/// How many attempts a filtered source makes before returning a short batch.
const MAX_REFILLS: u64 = 64;

/// MLR source that drops samples explained by already learned regressors:
/// a sample is removed when `|y - <x, w>| <= threshold` for some stored `w`.
pub struct PeeledMlr<'a> {
    pub inner: &'a dyn MlrSource,
    pub peeled: Vec<(Vector, f64)>,
}

impl MlrSource for PeeledMlr<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn draw(&self, n: usize, stream: Stream) -> MlrBatch {
        if self.peeled.is_empty() {
            return self.inner.draw(n, stream);
        }
        let mut out = MlrBatch { d: self.dim(), x: Vec::new(), y: Vec::new() };
        for attempt in 0..MAX_REFILLS {
            let need = n - out.len();
            let b = self.inner.draw(need + need / 4 + 16, stream.child(attempt));
            let mut keep = vec![true; b.len()];
            for (w, thr) in &self.peeled {
                let r = b.residuals(w).expect("peeled vector has source dimension");
                keep.iter_mut().zip(r).for_each(|(k, r)| *k &= r.abs() > *thr);
            }
            out.append(&b.filter(&keep));
            if out.len() >= n {
                out.truncate(n);
                break;
            }
        }
        out
    }
}

/// Vector source that drops samples lying close to learned hyperplanes:
/// removed when `|<x, v>| <= threshold` for some stored `v`.
pub struct PeeledVectors<'a> {
    pub inner: &'a dyn VectorSource,
    pub peeled: Vec<(Vector, f64)>,
}

impl VectorSource for PeeledVectors<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn draw(&self, n: usize, stream: Stream) -> VecBatch {
        if self.peeled.is_empty() {
            return self.inner.draw(n, stream);
        }
        let mut out = VecBatch { d: self.dim(), x: Vec::new() };
        for attempt in 0..MAX_REFILLS {
            let need = n - out.len();
            let b = self.inner.draw(need + need / 4 + 16, stream.child(attempt));
            let mut keep = vec![true; b.len()];
            for (v, thr) in &self.peeled {
                let p = b.project(v);
                keep.iter_mut().zip(p).for_each(|(k, p)| *k &= p.abs() > *thr);
            }
            out.append(&b.filter(&keep));
            if out.len() >= n {
                out.truncate(n);
                break;
            }
        }
        out
    }
}

/// Wraps a source and counts the samples handed out.
pub struct Counted<S> {
    pub inner: S,
    count: AtomicU64,
}

impl<S> Counted<S> {
    pub fn new(inner: S) -> Self {
        Counted { inner, count: AtomicU64::new(0) }
    }
    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

impl<S: MlrSource> MlrSource for Counted<S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn draw(&self, n: usize, stream: Stream) -> MlrBatch {
        let b = self.inner.draw(n, stream);
        self.count.fetch_add(b.len() as u64, Ordering::Relaxed);
        b
    }
}

impl<S: VectorSource> VectorSource for Counted<S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn draw(&self, n: usize, stream: Stream) -> VecBatch {
        let b = self.inner.draw(n, stream);
        self.count.fetch_add(b.len() as u64, Ordering::Relaxed);
        b
    }
}
