//! Core data types, synthetic samplers, residual projections and recovery
//! scoring.

use crate::error::{FmdError, Result};
use crate::par;
use crate::rng::{label, Stream};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub type Vector = DVector<f64>;

/// Mixture of linear regressions: `y = <w_i, x> + N(0, noise_rate^2)` with
/// `x ~ N(0, I_d)` and `i` drawn from `weights`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlrModel {
    pub weights: Vec<f64>,
    pub regressors: Vec<Vector>,
    pub noise_rate: f64,
}

/// Mixture of hyperplanes: `x ~ N(0, I - v_i v_i^T)` with `i` drawn from
/// `weights`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperplaneModel {
    pub weights: Vec<f64>,
    pub directions: Vec<Vector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: Vector,
    pub y: f64,
}

/// A batch of labelled samples stored row-major for fast projections.
#[derive(Debug, Clone, PartialEq)]
pub struct MlrBatch {
    pub d: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// A batch of unlabelled vectors stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VecBatch {
    pub d: usize,
    pub x: Vec<f64>,
}

/// Zero-mean univariate Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroMeanGmm {
    pub weights: Vec<f64>,
    pub sigmas: Vec<f64>,
}

fn check_weights(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(FmdError::InvalidArgument("empty weight vector".into()));
    }
    if w.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
        return Err(FmdError::InvalidArgument("weights must be positive".into()));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(FmdError::InvalidArgument(format!("weights sum to {s}, not 1")));
    }
    Ok(())
}

fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn haar_unit(d: usize, rng: &mut impl Rng) -> Vector {
    loop {
        let v = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Uniformly random unit vector in `R^d`.
pub fn random_unit(d: usize, stream: Stream) -> Vector {
    haar_unit(d, &mut stream.rng())
}

/// Draws `n` standard Gaussian rows into a row-major buffer, chunk by chunk,
/// with one stream per chunk.
fn gaussian_rows(n: usize, d: usize, stream: Stream) -> Vec<f64> {
    let chunks: Vec<Vec<f64>> = par::map(n.div_ceil(par::CHUNK), |c| {
        let rows = par::CHUNK.min(n - c * par::CHUNK);
        let mut rng = stream.child(c as u64).rng();
        (0..rows * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    });
    chunks.concat()
}

fn uniforms(n: usize, stream: Stream) -> Vec<f64> {
    let chunks: Vec<Vec<f64>> = par::map(n.div_ceil(par::CHUNK), |c| {
        let rows = par::CHUNK.min(n - c * par::CHUNK);
        let mut rng = stream.child(c as u64).rng();
        (0..rows).map(|_| rng.random::<f64>()).collect()
    });
    chunks.concat()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

impl MlrModel {
    pub fn new(weights: Vec<f64>, regressors: Vec<Vector>, noise_rate: f64) -> Result<Self> {
        check_weights(&weights)?;
        if regressors.len() != weights.len() {
            return Err(FmdError::SizeMismatch("weights vs regressors".into()));
        }
        let d = regressors[0].len();
        if let Some(r) = regressors.iter().find(|r| r.len() != d) {
            return Err(FmdError::DimensionMismatch { expected: d, got: r.len() });
        }
        if !(noise_rate >= 0.0) {
            return Err(FmdError::InvalidArgument("noise rate must be nonnegative".into()));
        }
        Ok(MlrModel { weights, regressors, noise_rate })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn d(&self) -> usize {
        self.regressors[0].len()
    }

    pub fn p_min(&self) -> f64 {
        self.weights.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Minimum pairwise distance between regressors (infinite when k = 1).
    pub fn separation(&self) -> f64 {
        min_pairwise(&self.regressors, false)
    }

    /// Messages for regressors whose norm exceeds `norm_bound`.
    pub fn norm_warnings(&self, norm_bound: f64) -> Vec<String> {
        self.regressors
            .iter()
            .enumerate()
            .filter(|(_, w)| w.norm() > norm_bound)
            .map(|(i, w)| format!("regressor {i} has norm {:.4} > bound {norm_bound}", w.norm()))
            .collect()
    }

    /// Random model with regressors uniform in the ball of radius
    /// `norm_bound`, rejection-sampled until the separation reaches `sep`.
    pub fn random(
        k: usize,
        d: usize,
        sep: f64,
        noise_rate: f64,
        norm_bound: f64,
        stream: Stream,
    ) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(FmdError::InvalidArgument("k and d must be positive".into()));
        }
        let mut rng = stream.child(label::GENERATE).rng();
        for _ in 0..100_000 {
            let regs: Vec<Vector> = (0..k)
                .map(|_| {
                    let r = norm_bound * rng.random::<f64>().powf(1.0 / d as f64);
                    haar_unit(d, &mut rng) * r
                })
                .collect();
            if min_pairwise(&regs, false) >= sep {
                return MlrModel::new(vec![1.0 / k as f64; k], regs, noise_rate);
            }
        }
        Err(FmdError::InvalidArgument(format!(
            "could not place {k} regressors with separation {sep} in radius {norm_bound}"
        )))
    }

    /// Draws a batch; deterministic given the stream.
    pub fn draw(&self, n: usize, stream: Stream) -> MlrBatch {
        let d = self.d();
        let x = gaussian_rows(n, d, stream.child(1));
        let u = uniforms(n, stream.child(2));
        let g = gaussian_rows(n, 1, stream.child(3));
        let regs: Vec<&[f64]> = self.regressors.iter().map(|w| w.as_slice()).collect();
        let y = par::map(n, |j| {
            let i = pick(&self.weights, u[j]);
            dot(regs[i], &x[j * d..(j + 1) * d]) + self.noise_rate * g[j]
        });
        MlrBatch { d, x, y }
    }
}

impl HyperplaneModel {
    pub fn new(weights: Vec<f64>, directions: Vec<Vector>) -> Result<Self> {
        check_weights(&weights)?;
        if directions.len() != weights.len() {
            return Err(FmdError::SizeMismatch("weights vs directions".into()));
        }
        let d = directions[0].len();
        for v in &directions {
            if v.len() != d {
                return Err(FmdError::DimensionMismatch { expected: d, got: v.len() });
            }
            if (v.norm() - 1.0).abs() > 1e-12 {
                return Err(FmdError::InvalidArgument("directions must be unit vectors".into()));
            }
        }
        Ok(HyperplaneModel { weights, directions })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn d(&self) -> usize {
        self.directions[0].len()
    }

    pub fn p_min(&self) -> f64 {
        self.weights.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Minimum distance between directions, taken over both signs.
    pub fn separation(&self) -> f64 {
        min_pairwise(&self.directions, true)
    }

    pub fn random(k: usize, d: usize, sep: f64, stream: Stream) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(FmdError::InvalidArgument("k and d must be positive".into()));
        }
        let mut rng = stream.child(label::GENERATE).rng();
        for _ in 0..100_000 {
            let dirs: Vec<Vector> = (0..k).map(|_| haar_unit(d, &mut rng)).collect();
            if min_pairwise(&dirs, true) >= sep {
                return HyperplaneModel::new(vec![1.0 / k as f64; k], dirs);
            }
        }
        Err(FmdError::InvalidArgument(format!(
            "could not place {k} directions with separation {sep}"
        )))
    }

    pub fn draw(&self, n: usize, stream: Stream) -> VecBatch {
        let d = self.d();
        let mut x = gaussian_rows(n, d, stream.child(1));
        let u = uniforms(n, stream.child(2));
        let dirs: Vec<&[f64]> = self.directions.iter().map(|v| v.as_slice()).collect();
        x.chunks_mut(d).enumerate().for_each(|(j, row)| {
            let v = dirs[pick(&self.weights, u[j])];
            let c = dot(v, row);
            row.iter_mut().zip(v).for_each(|(r, vi)| *r -= c * vi);
        });
        VecBatch { d, x }
    }
}

fn min_pairwise(vs: &[Vector], signed: bool) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..vs.len() {
        for j in i + 1..vs.len() {
            let mut dist = (&vs[i] - &vs[j]).norm();
            if signed {
                dist = dist.min((&vs[i] + &vs[j]).norm());
            }
            best = best.min(dist);
        }
    }
    best
}

impl MlrBatch {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.x[j * self.d..(j + 1) * self.d]
    }

    pub fn from_samples(samples: &[LabeledSample]) -> Result<Self> {
        let d = samples.first().map(|s| s.x.len()).unwrap_or(0);
        let mut x = Vec::with_capacity(samples.len() * d);
        for s in samples {
            if s.x.len() != d {
                return Err(FmdError::DimensionMismatch { expected: d, got: s.x.len() });
            }
            x.extend(s.x.iter());
        }
        Ok(MlrBatch { d, x, y: samples.iter().map(|s| s.y).collect() })
    }

    pub fn to_samples(&self) -> Vec<LabeledSample> {
        (0..self.len())
            .map(|j| LabeledSample { x: Vector::from_column_slice(self.row(j)), y: self.y[j] })
            .collect()
    }

    /// Residuals `y - <a, x>` in sample order.
    pub fn residuals(&self, a: &Vector) -> Result<Vec<f64>> {
        if a.len() != self.d {
            return Err(FmdError::DimensionMismatch { expected: self.d, got: a.len() });
        }
        let a = a.as_slice();
        Ok(par::map(self.len(), |j| self.y[j] - dot(a, self.row(j))))
    }

    /// Projections `X u` for each column of `u` (given as a list of vectors).
    pub fn project(&self, dirs: &[Vector]) -> Vec<Vec<f64>> {
        dirs.iter()
            .map(|u| {
                let u = u.as_slice();
                par::map(self.len(), |j| dot(u, self.row(j)))
            })
            .collect()
    }

    /// Keeps the rows for which `keep` is true.
    pub fn filter(&self, keep: &[bool]) -> MlrBatch {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (j, &k) in keep.iter().enumerate() {
            if k {
                x.extend_from_slice(self.row(j));
                y.push(self.y[j]);
            }
        }
        MlrBatch { d: self.d, x, y }
    }

    pub fn append(&mut self, other: &MlrBatch) {
        self.x.extend_from_slice(&other.x);
        self.y.extend_from_slice(&other.y);
    }

    pub fn truncate(&mut self, n: usize) {
        self.x.truncate(n * self.d);
        self.y.truncate(n);
    }
}

impl VecBatch {
    pub fn len(&self) -> usize {
        self.x.len() / self.d.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.x[j * self.d..(j + 1) * self.d]
    }

    pub fn project(&self, a: &Vector) -> Vec<f64> {
        let a = a.as_slice();
        par::map(self.len(), |j| dot(a, self.row(j)))
    }

    pub fn filter(&self, keep: &[bool]) -> VecBatch {
        let mut x = Vec::new();
        for (j, &k) in keep.iter().enumerate() {
            if k {
                x.extend_from_slice(self.row(j));
            }
        }
        VecBatch { d: self.d, x }
    }

    pub fn append(&mut self, other: &VecBatch) {
        self.x.extend_from_slice(&other.x);
    }

    pub fn truncate(&mut self, n: usize) {
        self.x.truncate(n * self.d);
    }
}

/// Draws `n` samples from an MLR model.
pub fn sample_mlr(model: &MlrModel, n: usize, seed: u64) -> Vec<LabeledSample> {
    model.draw(n, Stream::root(seed).child(label::SAMPLE)).to_samples()
}

/// Draws `n` vectors from a mixture of hyperplanes.
pub fn sample_hyperplanes(model: &HyperplaneModel, n: usize, seed: u64) -> Vec<Vector> {
    let b = model.draw(n, Stream::root(seed).child(label::SAMPLE));
    (0..b.len()).map(|j| Vector::from_column_slice(b.row(j))).collect()
}

/// Exact law of `y - <a, x>`: component `i` has standard deviation
/// `sqrt(|w_i - a|^2 + noise^2)`.
pub fn residual_gmm(model: &MlrModel, a: &Vector) -> Result<ZeroMeanGmm> {
    if a.len() != model.d() {
        return Err(FmdError::DimensionMismatch { expected: model.d(), got: a.len() });
    }
    let sigmas = model
        .regressors
        .iter()
        .map(|w| ((w - a).norm_squared() + model.noise_rate.powi(2)).sqrt())
        .collect();
    Ok(ZeroMeanGmm { weights: model.weights.clone(), sigmas })
}

/// Exact law of `<a, x>` under a hyperplane mixture: component `i` has
/// standard deviation `|a - <a, v_i> v_i|`.
pub fn hyperplane_projection_gmm(model: &HyperplaneModel, a: &Vector) -> ZeroMeanGmm {
    let sigmas = model
        .directions
        .iter()
        .map(|v| (a.norm_squared() - a.dot(v).powi(2)).max(0.0).sqrt())
        .collect();
    ZeroMeanGmm { weights: model.weights.clone(), sigmas }
}

/// `y_j - <a, x_j>` for each sample, in order.
pub fn residual_project(samples: &[LabeledSample], a: &Vector) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            if s.x.len() != a.len() {
                Err(FmdError::DimensionMismatch { expected: a.len(), got: s.x.len() })
            } else {
                Ok(s.y - s.x.dot(a))
            }
        })
        .collect()
}

impl ZeroMeanGmm {
    pub fn new(weights: Vec<f64>, sigmas: Vec<f64>) -> Result<Self> {
        check_weights(&weights)?;
        if weights.len() != sigmas.len() {
            return Err(FmdError::SizeMismatch("weights vs sigmas".into()));
        }
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(FmdError::InvalidArgument("sigmas must be nonnegative".into()));
        }
        Ok(ZeroMeanGmm { weights, sigmas })
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigmas.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas.iter().cloned().fold(0.0, f64::max)
    }

    pub fn p_min(&self) -> f64 {
        self.weights.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Sum of the coefficients of the Fourier transform (a sum of Gaussians).
    pub fn coefficient_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.sigmas)
            .map(|(w, s)| w * (-0.5 * x * x / (s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt()))
            .sum()
    }

    /// Draws `n` values.
    pub fn draw(&self, n: usize, stream: Stream) -> Vec<f64> {
        let u = uniforms(n, stream.child(1));
        let g = gaussian_rows(n, 1, stream.child(2));
        par::map(n, |j| self.sigmas[pick(&self.weights, u[j])] * g[j])
    }
}

/// Result of matching estimates to ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// `permutation[i]` is the truth index matched to estimate `i`.
    pub permutation: Vec<usize>,
    pub errors: Vec<f64>,
    pub max_error: f64,
    pub runtime_secs: f64,
    pub samples_used: u64,
}

/// Truth vectors for scoring.
pub enum Truth<'a> {
    Mlr(&'a MlrModel),
    Hyperplanes(&'a HyperplaneModel),
}

/// Matches estimates to truth minimising the largest error (ties broken by
/// the total error). With `signed`, each distance is the minimum over the two
/// signs of the estimate.
pub fn score_recovery(estimates: &[Vector], truth: Truth<'_>, signed: bool) -> Result<RecoveryReport> {
    let vs: &[Vector] = match truth {
        Truth::Mlr(m) => &m.regressors,
        Truth::Hyperplanes(h) => &h.directions,
    };
    if estimates.len() != vs.len() {
        return Err(FmdError::SizeMismatch(format!(
            "{} estimates for {} components",
            estimates.len(),
            vs.len()
        )));
    }
    let k = vs.len();
    let mut dist = vec![vec![0.0; k]; k];
    for i in 0..k {
        if estimates[i].len() != vs[0].len() {
            return Err(FmdError::DimensionMismatch { expected: vs[0].len(), got: estimates[i].len() });
        }
        for j in 0..k {
            let mut dd = (&estimates[i] - &vs[j]).norm();
            if signed {
                dd = dd.min((&estimates[i] + &vs[j]).norm());
            }
            dist[i][j] = dd;
        }
    }
    let permutation = bottleneck_assignment(&dist);
    let errors: Vec<f64> = (0..k).map(|i| dist[i][permutation[i]]).collect();
    let max_error = errors.iter().cloned().fold(0.0, f64::max);
    Ok(RecoveryReport { permutation, errors, max_error, runtime_secs: 0.0, samples_used: 0 })
}

/// Assignment minimising (max cost, total cost) lexicographically. Exhaustive
/// for small k, bottleneck matching by threshold search otherwise.
pub fn bottleneck_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let k = cost.len();
    if k <= 8 {
        let mut perm: Vec<usize> = (0..k).collect();
        let mut best = perm.clone();
        let mut best_key = (f64::INFINITY, f64::INFINITY);
        permute(&mut perm, 0, &mut |p| {
            let mx = (0..k).map(|i| cost[i][p[i]]).fold(0.0, f64::max);
            let sm: f64 = (0..k).map(|i| cost[i][p[i]]).sum();
            if mx < best_key.0 || (mx == best_key.0 && sm < best_key.1) {
                best_key = (mx, sm);
                best = p.to_vec();
            }
        });
        return best;
    }
    let mut levels: Vec<f64> = cost.iter().flatten().cloned().collect();
    levels.sort_by(|a, b| a.total_cmp(b));
    levels.dedup();
    let (mut lo, mut hi) = (0, levels.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if perfect_matching(cost, levels[mid]).is_some() {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    perfect_matching(cost, levels[lo]).expect("threshold at max cost always matches")
}

fn permute(p: &mut Vec<usize>, i: usize, visit: &mut impl FnMut(&[usize])) {
    if i == p.len() {
        visit(p);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permute(p, i + 1, visit);
        p.swap(i, j);
    }
}

fn perfect_matching(cost: &[Vec<f64>], thr: f64) -> Option<Vec<usize>> {
    let k = cost.len();
    let mut match_of_col: Vec<Option<usize>> = vec![None; k];
    fn augment(
        i: usize,
        cost: &[Vec<f64>],
        thr: f64,
        seen: &mut [bool],
        match_of_col: &mut [Option<usize>],
    ) -> bool {
        for j in 0..cost.len() {
            if cost[i][j] <= thr && !seen[j] {
                seen[j] = true;
                if match_of_col[j].is_none_or(|r| augment(r, cost, thr, seen, match_of_col)) {
                    match_of_col[j] = Some(i);
                    return true;
                }
            }
        }
        false
    }
    for i in 0..k {
        let mut seen = vec![false; k];
        if !augment(i, cost, thr, &mut seen, &mut match_of_col) {
            return None;
        }
    }
    let mut out = vec![0; k];
    for (j, r) in match_of_col.iter().enumerate() {
        out[r.unwrap()] = j;
    }
    Some(out)
}

/// On-disk model description shared by both model kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub k: usize,
    pub d: usize,
    pub weights: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    #[serde(default)]
    pub noise_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlr,
    Hyperplanes,
}

/// Either kind of model.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Mlr(MlrModel),
    Hyperplanes(HyperplaneModel),
}

impl AnyModel {
    pub fn to_file(&self) -> ModelFile {
        match self {
            AnyModel::Mlr(m) => ModelFile {
                kind: ModelKind::Mlr,
                k: m.k(),
                d: m.d(),
                weights: m.weights.clone(),
                vectors: m.regressors.iter().map(|v| v.as_slice().to_vec()).collect(),
                noise_rate: m.noise_rate,
            },
            AnyModel::Hyperplanes(h) => ModelFile {
                kind: ModelKind::Hyperplanes,
                k: h.k(),
                d: h.d(),
                weights: h.weights.clone(),
                vectors: h.directions.iter().map(|v| v.as_slice().to_vec()).collect(),
                noise_rate: 0.0,
            },
        }
    }

    pub fn from_file(f: &ModelFile) -> Result<Self> {
        if f.vectors.len() != f.k || f.weights.len() != f.k {
            return Err(FmdError::SizeMismatch("k does not match weights/vectors".into()));
        }
        if let Some(v) = f.vectors.iter().find(|v| v.len() != f.d) {
            return Err(FmdError::DimensionMismatch { expected: f.d, got: v.len() });
        }
        let vs: Vec<Vector> = f.vectors.iter().map(|v| Vector::from_column_slice(v)).collect();
        match f.kind {
            ModelKind::Mlr => Ok(AnyModel::Mlr(MlrModel::new(f.weights.clone(), vs, f.noise_rate)?)),
            ModelKind::Hyperplanes => Ok(AnyModel::Hyperplanes(HyperplaneModel::new(f.weights.clone(), vs)?)),
        }
    }
}
