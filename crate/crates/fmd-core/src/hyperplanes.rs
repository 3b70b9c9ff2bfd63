//! Mixtures of hyperplanes: moment descent on the unit sphere, the
//! projection-count outcome check, reduction to a noiseless MLR instance,
//! boosting through that reduction, and the peeling learner.
//!
//! Under component `i` the projection `<a, x>` is `N(0, |Pi_i a|^2)` with
//! `Pi_i = I - v_i v_i^T`, so the smallest residual scale of the projected
//! sample measures how close `a` is to some `+-v_i`.

use crate::boost::boost;
use crate::config::{DescentConfig, Hints};
use crate::descent::{DescentStep, DescentTrace, LearnOutcome};
use crate::error::{invalid, FmdError, Result};
use crate::minvar::{compare_estimates, estimate_min_variance_warm, minvar_degree, MinVarEstimate};
use crate::model::{dot, MlrBatch, VecBatch, Vector};
use crate::rng::{label, Stream};
use crate::source::{Counted, MlrSource, PeeledVectors, VectorSource};
use crate::subspace::{hyperplane_span, SpanBasis};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// `c` in the check sample size `c ln(1/delta) / p_min^2`.
const CHECK_SAMPLE_CONSTANT: f64 = 200.0;
const MIN_CHECK_SAMPLES: usize = 2000;
/// Smallest `|<v, w>|` accepted for the reduction direction.
const REDUCTION_ALIGNMENT: f64 = 0.5;
const REDUCTION_DRAWS: usize = 64;
/// Samples used to estimate the whitening transform.
const WHITENING_SAMPLES: usize = 50_000;

/// Flips `v` so that its largest-magnitude coordinate is positive.
pub fn canonical_sign(v: &Vector) -> Vector {
    let (mut idx, mut best) = (0, -1.0);
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        -v
    } else {
        v.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperplaneDescentOutcome {
    pub v: Vector,
    pub sigma: f64,
    /// The outcome check accepted `v`.
    pub checked: bool,
    /// Restarts consumed, including the successful one.
    pub restarts: usize,
    pub trace: DescentTrace,
}

struct SphereSchedule {
    p: usize,
    sigma_lower: f64,
    target: f64,
    step_mult: f64,
    kappa1: f64,
    kappa2: f64,
    candidates: usize,
}

fn sphere_scale(values: &[f64], sch: &SphereSchedule, cfg: &DescentConfig, warm: Option<f64>) -> Result<MinVarEstimate> {
    match estimate_min_variance_warm(values, 1.0, sch.sigma_lower, sch.p, &cfg.minvar, warm) {
        Err(FmdError::TooConcentrated { .. }) => Ok(MinVarEstimate {
            sigma: sch.sigma_lower,
            bandwidth: 0.0,
            degree: sch.p,
            samples: values.len(),
            iterations: 0,
            floored: true,
        }),
        other => other,
    }
}

/// One descent run from `a0`, renormalizing after every step.
fn sphere_run(
    source: &dyn VectorSource,
    a0: Vector,
    basis: &SpanBasis,
    sch: &SphereSchedule,
    cfg: &DescentConfig,
    stream: Stream,
    trace: &mut DescentTrace,
) -> Result<(Vector, f64)> {
    let d = source.dim();
    let k = basis.u.ncols();
    let mut a = a0;
    let mut warm = None;
    let mut stalls = 0;
    let mut sigma = f64::INFINITY;
    for t in 0..cfg.iterations {
        let s = stream.child2(label::ITER, t as u64);
        let batch = source.draw(cfg.batch_size, s.child(label::SAMPLE));
        let proj_a = batch.project(&a);
        let base = sphere_scale(&proj_a, sch, cfg, warm)?;
        sigma = base.sigma;
        warm = Some(sigma);
        if base.floored || sigma < sch.target {
            break;
        }
        let proj = DMatrix::from_row_slice(batch.len(), d, &batch.x) * &basis.u;
        let step = sch.step_mult * sigma;
        let mut record = DescentStep {
            t,
            a: a.as_slice().to_vec(),
            sigma,
            step,
            accepted: None,
            verdicts: Vec::new(),
            candidate_sigmas: Vec::new(),
        };
        for j in 0..sch.candidates {
            let mut rng = s.child2(label::DIRECTION, j as u64).rng();
            let g = Vector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
            let n = g.norm();
            if n == 0.0 {
                continue;
            }
            let c = g / n;
            let z = &basis.u * &c;
            let moved = &a - &z * step;
            let norm = moved.norm();
            if norm == 0.0 {
                continue;
            }
            let shift = &proj * &c;
            let vals: Vec<f64> = proj_a.iter().zip(shift.iter()).map(|(p, q)| (p - step * q) / norm).collect();
            let cand = sphere_scale(&vals, sch, cfg, Some(sigma))?;
            let verdict = compare_estimates(sigma, cand.sigma, sch.kappa1, sch.kappa2).verdict;
            record.verdicts.push(verdict);
            record.candidate_sigmas.push(cand.sigma);
            if verdict {
                record.accepted = Some(j);
                a = moved / norm;
                break;
            }
        }
        let accepted = record.accepted.is_some();
        trace.steps.push(record);
        if accepted {
            stalls = 0;
        } else {
            stalls += 1;
            if stalls >= cfg.stall_patience {
                break;
            }
        }
    }
    Ok((a, sigma))
}

/// Descent over unit vectors from random starts in the estimated span,
/// gated by [`check_outcome_hyperplanes`]. Returns the first checked
/// direction, or the best by `sigma*` when every restart fails.
pub fn hyperplane_moment_descent(
    source: &dyn VectorSource,
    hints: &Hints,
    delta: f64,
    epsilon: f64,
    cfg: &DescentConfig,
    stream: Stream,
) -> Result<HyperplaneDescentOutcome> {
    hints.validate()?;
    cfg.validate()?;
    check_unit("epsilon", epsilon)?;
    check_unit("delta", delta)?;
    let d = source.dim();
    let k = hints.k;
    let kappa = cfg.kappa_constant * (k as f64).powf(-0.6);
    let sch = SphereSchedule {
        p: minvar_degree(hints.p_min, cfg.minvar.degree_constant).min(cfg.minvar.max_degree),
        sigma_lower: epsilon * cfg.sigma_lower_factor,
        target: 0.99 * epsilon,
        step_mult: (k as f64).powf(-0.2),
        kappa1: kappa,
        kappa2: 2.0 * kappa,
        candidates: cfg.candidate_count(k, delta),
    };
    let mbatch = source.draw(cfg.matrix_samples, stream.child(label::MATRIX));
    let basis = hyperplane_span(&mbatch, k.min(d), cfg.svd_accuracy, delta, stream.child(label::SVD))?;
    let restarts = cfg.restart_count(hints, delta);
    let mut trace = DescentTrace::default();
    let mut best: Option<(Vector, f64)> = None;
    for i in 0..restarts {
        let s = stream.child2(label::RESTART, i as u64);
        let mut rng = s.child(label::DIRECTION).rng();
        let g = Vector::from_fn(basis.u.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let a0 = (&basis.u * &g).normalize();
        let (v, sigma) = sphere_run(source, a0, &basis, &sch, cfg, s, &mut trace)?;
        if check_outcome_hyperplanes(source, &v, hints, epsilon, delta, s.child(label::CHECK))? {
            return Ok(HyperplaneDescentOutcome { v, sigma, checked: true, restarts: i + 1, trace });
        }
        if best.as_ref().is_none_or(|b| sigma < b.1) {
            best = Some((v, sigma));
        }
    }
    let (v, sigma) = best.expect("restart_count >= 1");
    Ok(HyperplaneDescentOutcome { v, sigma, checked: false, restarts, trace })
}

/// Accepts `v` when at least `4 p_min / 15` of `N_2 = c ln(1/delta) / p_min^2`
/// projections `<v, x>` fall in `[-epsilon, epsilon]`.
pub fn check_outcome_hyperplanes(
    source: &dyn VectorSource,
    v: &Vector,
    hints: &Hints,
    epsilon: f64,
    delta: f64,
    stream: Stream,
) -> Result<bool> {
    hints.validate()?;
    check_unit("epsilon", epsilon)?;
    check_unit("delta", delta)?;
    if v.len() != source.dim() {
        return Err(FmdError::DimensionMismatch { expected: source.dim(), got: v.len() });
    }
    let n = ((CHECK_SAMPLE_CONSTANT * (1.0 / delta).ln() / hints.p_min.powi(2)).ceil() as usize).max(MIN_CHECK_SAMPLES);
    let batch = source.draw(n, stream);
    if batch.is_empty() {
        return Ok(false);
    }
    let inside = batch.project(v).iter().filter(|p| p.abs() <= epsilon).count();
    Ok(inside as f64 >= 4.0 * hints.p_min / 15.0 * batch.len() as f64)
}

/// Householder reflection taking `w` to the last basis vector; its own
/// inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct Reflection {
    u: Option<Vector>,
}

impl Reflection {
    pub fn to_last_axis(w: &Vector) -> Result<Self> {
        let n = w.norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(invalid("reduction direction must be a unit vector"));
        }
        let d = w.len();
        let mut u = w.clone();
        u[d - 1] -= 1.0;
        let un = u.norm();
        Ok(Reflection { u: (un > 1e-14).then(|| u / un) })
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
        if let Some(u) = &self.u {
            let c = 2.0 * dot(u.as_slice(), x);
            out.iter_mut().zip(u.iter()).for_each(|(o, ui)| *o -= c * ui);
        }
    }

    pub fn apply_vec(&self, x: &Vector) -> Vector {
        let mut out = Vector::zeros(x.len());
        self.apply(x.as_slice(), out.as_mut_slice());
        out
    }
}

/// Rotates so `w` becomes the last axis and splits each sample into
/// covariates (first `d - 1` coordinates) and response (`<x, w>`). A
/// hyperplane `v_j` with `a_j = <Rv_j, e_d> != 0` becomes the regressor
/// `-v'_j / a_j`, where `v'_j` is the first `d - 1` coordinates of `Rv_j`.
pub fn reduce_to_mlr(batch: &VecBatch, w: &Vector) -> Result<(MlrBatch, Reflection)> {
    if w.len() != batch.d {
        return Err(FmdError::DimensionMismatch { expected: batch.d, got: w.len() });
    }
    if batch.d < 2 {
        return Err(invalid("reduction needs d >= 2"));
    }
    let r = Reflection::to_last_axis(w)?;
    Ok((reduce_with(batch, &r), r))
}

fn reduce_with(batch: &VecBatch, r: &Reflection) -> MlrBatch {
    let d = batch.d;
    let mut out = MlrBatch { d: d - 1, x: Vec::with_capacity(batch.len() * (d - 1)), y: Vec::with_capacity(batch.len()) };
    let mut buf = vec![0.0; d];
    for j in 0..batch.len() {
        r.apply(batch.row(j), &mut buf);
        out.x.extend_from_slice(&buf[..d - 1]);
        out.y.push(buf[d - 1]);
    }
    out
}

/// Regressor of the reduced instance for hyperplane `v`, or `None` when `v`
/// is orthogonal to the reduction direction.
pub fn reduced_regressor(v: &Vector, r: &Reflection) -> Option<Vector> {
    let rv = r.apply_vec(v);
    let d = rv.len();
    let a = rv[d - 1];
    (a.abs() > 1e-12).then(|| -rv.rows(0, d - 1).into_owned() / a)
}

/// Unit hyperplane normal for a reduced regressor `u`: `R (-u, 1) / |(-u, 1)|`.
pub fn direction_from_regressor(u: &Vector, r: &Reflection) -> Vector {
    let d = u.len() + 1;
    let mut v = Vector::zeros(d);
    v.rows_mut(0, d - 1).copy_from(&(-u));
    v[d - 1] = 1.0;
    r.apply_vec(&v.normalize())
}

/// Reduced and whitened MLR view of a hyperplane source.
struct ReducedSource<'a> {
    inner: &'a dyn VectorSource,
    reflection: Reflection,
    whiten: DMatrix<f64>,
}

impl MlrSource for ReducedSource<'_> {
    fn dim(&self) -> usize {
        self.inner.dim() - 1
    }

    fn draw(&self, n: usize, stream: Stream) -> MlrBatch {
        let mut b = reduce_with(&self.inner.draw(n, stream), &self.reflection);
        let m = b.d;
        if m > 0 && !b.is_empty() {
            let x = DMatrix::from_row_slice(b.len(), m, &b.x) * &self.whiten;
            for j in 0..b.len() {
                for i in 0..m {
                    b.x[j * m + i] = x[(j, i)];
                }
            }
        }
        b
    }
}

/// `Sigma^{-1/2}` of the reduced covariates, with eigenvalues floored.
fn whitening(batch: &MlrBatch) -> DMatrix<f64> {
    let m = batch.d;
    let x = DMatrix::from_row_slice(batch.len(), m, &batch.x);
    let cov = x.transpose() * &x / batch.len().max(1) as f64;
    let eig = SymmetricEigen::new(cov);
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.max(1e-6).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperplaneBoostOutcome {
    pub v: Vector,
    pub converged: bool,
    /// No reduction direction met the alignment threshold; `v` itself was
    /// used.
    pub alignment_fallback: bool,
}

/// Refines a warm-start normal `v` by boosting the whitened MLR reduction
/// along a random span direction `w` with `|<v, w>| >= 1/2`, then mapping the
/// refined regressor back and fixing the sign to agree with `v`.
pub fn hyperplane_boost(
    source: &dyn VectorSource,
    v: &Vector,
    epsilon: f64,
    hints: &Hints,
    cfg: &DescentConfig,
    stream: Stream,
) -> Result<HyperplaneBoostOutcome> {
    hints.validate()?;
    check_unit("epsilon", epsilon)?;
    let d = source.dim();
    if v.len() != d {
        return Err(FmdError::DimensionMismatch { expected: d, got: v.len() });
    }
    if d < 2 {
        return Ok(HyperplaneBoostOutcome { v: v.normalize(), converged: true, alignment_fallback: false });
    }
    let v = v.normalize();
    let mbatch = source.draw(cfg.matrix_samples, stream.child(label::MATRIX));
    let basis = hyperplane_span(&mbatch, hints.k.min(d), cfg.svd_accuracy, 0.1, stream.child(label::SVD))?;
    let mut rng = stream.child(label::DIRECTION).rng();
    let mut w = None;
    for _ in 0..REDUCTION_DRAWS {
        let g = Vector::from_fn(basis.u.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let cand = (&basis.u * g).normalize();
        if cand.dot(&v).abs() >= REDUCTION_ALIGNMENT {
            w = Some(cand);
            break;
        }
    }
    let alignment_fallback = w.is_none();
    let w = w.unwrap_or_else(|| v.clone());
    let reflection = Reflection::to_last_axis(&w)?;
    let probe = reduce_with(&source.draw(WHITENING_SAMPLES, stream.child(label::REDUCE)), &reflection);
    let whiten = whitening(&probe);
    let reduced = ReducedSource { inner: source, reflection: reflection.clone(), whiten: whiten.clone() };
    let u0 = reduced_regressor(&v, &reflection).ok_or_else(|| invalid("warm start orthogonal to reduction direction"))?;
    let white_u0 = whiten
        .clone()
        .try_inverse()
        .ok_or_else(|| invalid("singular whitening transform"))?
        * &u0;
    let out = boost(&reduced, &white_u0, epsilon, hints, &cfg.boost, &cfg.minvar, stream.child(label::BOOST))?;
    let u = &whiten * &out.v;
    let mut refined = direction_from_regressor(&u, &reflection);
    if refined.dot(&v) < 0.0 {
        refined = -refined;
    }
    Ok(HyperplaneBoostOutcome { v: refined, converged: out.converged, alignment_fallback })
}

/// `k` rounds of descent, boosting and peeling. Directions are returned with
/// canonical sign.
pub fn learn_hyperplanes(
    source: &dyn VectorSource,
    hints: &Hints,
    delta: f64,
    epsilon: f64,
    cfg: &DescentConfig,
    stream: Stream,
) -> Result<LearnOutcome> {
    hints.validate()?;
    cfg.validate()?;
    check_unit("epsilon", epsilon)?;
    check_unit("delta", delta)?;
    let counted = Counted::new(source);
    let d = source.dim();
    let k = hints.k;
    let delta_round = delta / (3.0 * k as f64);
    let thr = crate::descent::peel_threshold(cfg, epsilon, d);
    let mut estimates: Vec<Vector> = Vec::new();
    let mut traces = Vec::new();
    let mut notes = Vec::new();
    let mut complete = true;
    for i in 0..k {
        let peeled = PeeledVectors { inner: &counted, peeled: estimates.iter().map(|v| (v.clone(), thr)).collect() };
        let left = (k - i) as f64;
        let sub = Hints {
            k: k - i,
            p_min: (hints.p_min / (1.0 - i as f64 * hints.p_min)).min(1.0 / left),
            separation: hints.separation,
        };
        let mut best = None;
        for attempt in 0..cfg.round_retries {
            let s = stream.child2(label::ROUND, i as u64).child(attempt as u64);
            let desc = hyperplane_moment_descent(&peeled, &sub, delta_round, epsilon, cfg, s.child(label::ITER))?;
            traces.push(desc.trace);
            let refined = hyperplane_boost(&peeled, &desc.v, epsilon, &sub, cfg, s.child(label::BOOST))?;
            let ok = check_outcome_hyperplanes(&peeled, &refined.v, &sub, epsilon, delta_round, s.child(label::CHECK))?;
            best = Some(canonical_sign(&refined.v));
            if ok {
                break;
            }
            notes.push(format!("round {i} attempt {attempt}: outcome check rejected the direction"));
            if attempt + 1 == cfg.round_retries {
                complete = false;
            }
        }
        estimates.push(best.expect("round_retries >= 1"));
    }
    Ok(LearnOutcome { estimates, complete, notes, traces, samples: counted.count() })
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must lie in (0, 1)")))
    }
}
