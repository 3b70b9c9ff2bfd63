//! Span estimation: the MLR moment matrix, the hyperplane covariance
//! deficiency, and randomized block power iteration.

use crate::error::{invalid, FmdError, Result};
use crate::model::{dot, MlrBatch, VecBatch, Vector};
use crate::par;
use crate::rng::Stream;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

/// Extra columns carried through the power iteration and dropped at the end.
pub const OVERSAMPLE: usize = 4;
const MIN_ITERATIONS: usize = 3;
const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct SpanBasis {
    /// `d x k` with orthonormal columns.
    pub u: DMatrix<f64>,
    /// Ratio of the `k`-th to the `(k+1)`-th Ritz value magnitude.
    pub gap_estimate: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SpanBasis {
    /// `U g / |U g|` for a coefficient vector `g`.
    pub fn direction(&self, g: &[f64]) -> Vector {
        let v = &self.u * Vector::from_column_slice(g);
        let n = v.norm();
        if n > 0.0 {
            v / n
        } else {
            v
        }
    }

    /// `U^T v`.
    pub fn coordinates(&self, v: &Vector) -> Vector {
        self.u.transpose() * v
    }
}

/// Linear operator `V -> M V` for the MLR moment matrix at `a`, without
/// forming `M`.
pub struct MlrMomentOperator<'a> {
    batch: &'a MlrBatch,
    /// `r_j^2 / 2` per sample.
    weights: Vec<f64>,
    mean_weight: f64,
}

impl<'a> MlrMomentOperator<'a> {
    pub fn new(batch: &'a MlrBatch, a: &Vector) -> Result<Self> {
        if batch.is_empty() {
            return Err(FmdError::TooFewSamples { need: 1, got: 0 });
        }
        let weights: Vec<f64> = batch.residuals(a)?.into_iter().map(|r| 0.5 * r * r).collect();
        let mean_weight = par::sum(weights.len(), |r| weights[r].iter().sum()) / weights.len() as f64;
        Ok(MlrMomentOperator { batch, weights, mean_weight })
    }

    /// As [`MlrMomentOperator::new`] but keeping only samples with residual
    /// at most `tau`. Far components then contribute `O(tau^3 / |w - a|)`
    /// while the nearest keeps nearly its full `p |w - a|^2`, so the near
    /// direction stays resolvable when it is small.
    pub fn trimmed(batch: &'a MlrBatch, a: &Vector, tau: f64) -> Result<Self> {
        let mut op = Self::new(batch, a)?;
        let cut = 0.5 * tau * tau;
        op.weights.iter_mut().for_each(|w| {
            if *w > cut {
                *w = 0.0
            }
        });
        op.mean_weight = par::sum(op.weights.len(), |r| op.weights[r].iter().sum()) / op.weights.len() as f64;
        Ok(op)
    }

    pub fn dim(&self) -> usize {
        self.batch.d
    }

    pub fn apply(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.batch.d;
        let m = v.ncols();
        let n = self.batch.len();
        let acc = par::sum_vec(n, d * m, |r, acc| {
            let mut t = vec![0.0; m];
            for j in r {
                let x = self.batch.row(j);
                let w = self.weights[j];
                for (c, tc) in t.iter_mut().enumerate() {
                    *tc = w * dot(x, v.column(c).as_slice());
                }
                for (i, xi) in x.iter().enumerate() {
                    for (c, tc) in t.iter().enumerate() {
                        acc[c * d + i] += xi * tc;
                    }
                }
            }
        });
        DMatrix::from_column_slice(d, m, &acc) / n as f64 - v * self.mean_weight
    }
}

/// `(1/N) sum_j (1/2) [r_j^2 x_j x_j^T - r_j^2 I]` with `r_j = y_j - <a, x_j>`.
pub fn mlr_moment_matrix(batch: &MlrBatch, a: &Vector) -> Result<DMatrix<f64>> {
    let op = MlrMomentOperator::new(batch, a)?;
    let d = batch.d;
    let n = batch.len();
    let acc = par::sum_vec(n, d * d, |r, acc| {
        for j in r {
            let x = batch.row(j);
            let w = op.weights[j];
            for i in 0..d {
                let wi = w * x[i];
                for l in 0..=i {
                    acc[i * d + l] += wi * x[l];
                }
            }
        }
    });
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        for l in 0..=i {
            let v = acc[i * d + l] / n as f64;
            m[(i, l)] = v;
            m[(l, i)] = v;
        }
        m[(i, i)] -= op.mean_weight;
    }
    Ok(m)
}

/// `I - (1/N) sum_j x_j x_j^T`.
pub fn hyperplane_moment_matrix(batch: &VecBatch) -> Result<DMatrix<f64>> {
    let d = batch.d;
    let n = batch.len();
    if n == 0 {
        return Err(FmdError::TooFewSamples { need: 1, got: 0 });
    }
    let acc = par::sum_vec(n, d * d, |r, acc| {
        for j in r {
            let x = batch.row(j);
            for i in 0..d {
                for l in 0..=i {
                    acc[i * d + l] += x[i] * x[l];
                }
            }
        }
    });
    let mut m = DMatrix::identity(d, d);
    for i in 0..d {
        for l in 0..=i {
            let v = acc[i * d + l] / n as f64;
            m[(i, l)] -= v;
            if l != i {
                m[(l, i)] -= v;
            }
        }
    }
    Ok(m)
}

fn orthonormalize(y: DMatrix<f64>) -> DMatrix<f64> {
    let cols = y.ncols();
    let q = y.qr().q();
    q.columns(0, cols).into_owned()
}

/// Eigenpairs of a symmetric matrix sorted by decreasing magnitude.
fn sorted_eigen(b: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let b = (&b + b.transpose()) * 0.5;
    let eig = SymmetricEigen::new(b);
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].abs().total_cmp(&eig.eigenvalues[i].abs()));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), idx.len(), |r, c| eig.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

fn gap_of(vals: &[f64], k: usize) -> f64 {
    match vals.get(k) {
        None => f64::INFINITY,
        Some(next) if next.abs() <= 1e-300 => f64::INFINITY,
        Some(next) => vals[k - 1].abs() / next.abs(),
    }
}

/// Orthonormal basis for the top-`k` eigenspace (by magnitude) of the
/// symmetric operator `matvec` on `R^d`, by randomized block power iteration
/// with re-orthonormalization each step. The iteration count follows
/// `ln(1 / (eta delta)) / ln(gap)` with the running gap estimate.
pub fn approx_block_svd<F>(matvec: F, d: usize, k: usize, eta: f64, delta: f64, stream: Stream) -> Result<SpanBasis>
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    if k == 0 || k > d {
        return Err(invalid(format!("need 1 <= k <= d, got k={k}, d={d}")));
    }
    if !(eta > 0.0 && eta < 1.0 && delta > 0.0 && delta < 1.0) {
        return Err(invalid("eta and delta must lie in (0, 1)"));
    }
    let m = (k + OVERSAMPLE).min(d);
    let mut rng = stream.rng();
    let mut q = orthonormalize(DMatrix::from_fn(d, m, |_, _| rng.sample::<f64, _>(StandardNormal)));
    let target = (1.0 / (eta * delta)).ln();
    let mut gap = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        let y = matvec(&q);
        let (vals, _) = sorted_eigen(q.transpose() * &y);
        gap = gap_of(&vals, k);
        q = orthonormalize(y);
        iterations += 1;
        let needed = if gap > 1.0 { (target / gap.ln()).ceil() as usize } else { usize::MAX };
        if iterations >= MIN_ITERATIONS && iterations >= needed {
            converged = true;
            break;
        }
    }
    // Rayleigh-Ritz on the final block.
    let y = matvec(&q);
    let (vals, vecs) = sorted_eigen(q.transpose() * &y);
    let u = orthonormalize(&q * vecs.columns(0, k));
    if vals.len() > k {
        gap = gap_of(&vals, k);
    }
    Ok(SpanBasis { u, gap_estimate: gap, iterations, converged })
}

/// Span estimate for the MLR moment matrix at `a`.
pub fn mlr_span(batch: &MlrBatch, a: &Vector, k: usize, eta: f64, delta: f64, stream: Stream) -> Result<SpanBasis> {
    let op = MlrMomentOperator::new(batch, a)?;
    approx_block_svd(|v| op.apply(v), op.dim(), k.min(op.dim()), eta, delta, stream)
}

/// Span estimate for the residual-trimmed MLR moment matrix.
pub fn mlr_span_trimmed(
    batch: &MlrBatch,
    a: &Vector,
    tau: f64,
    k: usize,
    eta: f64,
    delta: f64,
    stream: Stream,
) -> Result<SpanBasis> {
    let op = MlrMomentOperator::trimmed(batch, a, tau)?;
    approx_block_svd(|v| op.apply(v), op.dim(), k.min(op.dim()), eta, delta, stream)
}

/// Span estimate for the hyperplane moment matrix.
pub fn hyperplane_span(batch: &VecBatch, k: usize, eta: f64, delta: f64, stream: Stream) -> Result<SpanBasis> {
    let m = hyperplane_moment_matrix(batch)?;
    approx_block_svd(|v| &m * v, batch.d, k.min(batch.d), eta, delta, stream)
}

/// Largest principal angle (radians) between the column spans of two
/// matrices with orthonormal columns.
pub fn principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let s = (a.transpose() * b).singular_values();
    let smin = s.iter().copied().fold(f64::INFINITY, f64::min);
    smin.clamp(0.0, 1.0).acos()
}
