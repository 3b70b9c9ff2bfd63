//! Moment descent for mixtures of linear regressions, and the two learners
//! built on it.
//!
//! Each outer step estimates the smallest residual scale `sigma*` at the
//! current guess `a`, estimates the span of the offsets `w_i - a`, and tries
//! random unit directions in that span with step `eta ~ k^{-1/4} sigma*`. A
//! candidate is accepted when the comparator judges its residual scale
//! smaller. Candidates are scored on the same batch as the current guess.

use crate::boost::boost;
use crate::config::{DescentConfig, Hints};
use crate::error::{invalid, FmdError, Result};
use crate::minvar::{compare_estimates, estimate_max_variance, estimate_min_variance_warm, minvar_degree, MinVarEstimate};
use crate::model::{random_unit, MlrBatch, Vector};
use crate::rng::{label, Stream};
use crate::source::{Counted, MlrSource, PeeledMlr};
use crate::subspace::{mlr_span, mlr_span_trimmed, SpanBasis};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentStep {
    pub t: usize,
    pub a: Vec<f64>,
    pub sigma: f64,
    pub step: f64,
    /// Index of the accepted candidate, if any.
    pub accepted: Option<usize>,
    /// Comparator verdict for each evaluated candidate, in order.
    pub verdicts: Vec<bool>,
    pub candidate_sigmas: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DescentTrace {
    pub steps: Vec<DescentStep>,
}

impl DescentTrace {
    pub fn write_json_lines(&self, mut w: impl Write) -> io::Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_json_lines(&self) -> String {
        let mut buf = Vec::new();
        self.write_json_lines(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentOutcome {
    pub a: Vector,
    /// Last measured `sigma*`.
    pub sigma: f64,
    /// `sigma*` fell below `0.99 epsilon`.
    pub reached: bool,
    /// No candidate was accepted for `stall_patience` consecutive steps.
    pub stalled: bool,
    pub trace: DescentTrace,
}

struct Schedule {
    k: usize,
    p: usize,
    sigma_lower: f64,
    target: f64,
    step_mult: f64,
    kappa1: f64,
    kappa2: f64,
    candidates: usize,
    delta: f64,
}

fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must lie in (0, 1)")))
    }
}

fn degree(hints: &Hints, cfg: &DescentConfig) -> usize {
    minvar_degree(hints.p_min, cfg.minvar.degree_constant).min(cfg.minvar.max_degree)
}

fn upper_bound(cfg: &DescentConfig, residuals: &[f64], p: usize, sigma_lower: f64) -> f64 {
    cfg.sigma_upper
        .unwrap_or_else(|| estimate_max_variance(residuals, p).map_or(1.0, |m| 2.0 * m))
        .max(sigma_lower)
}

fn scale(values: &[f64], upper: f64, sch: &Schedule, cfg: &DescentConfig, warm: Option<f64>) -> Result<MinVarEstimate> {
    match estimate_min_variance_warm(values, upper, sch.sigma_lower, sch.p, &cfg.minvar, warm) {
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

fn span(batch: &MlrBatch, a: &Vector, sigma: f64, sch: &Schedule, cfg: &DescentConfig, stream: Stream) -> Result<SpanBasis> {
    let k = sch.k.min(batch.d);
    match cfg.matrix_trim {
        Some(c) => mlr_span_trimmed(batch, a, c * sigma, k, cfg.svd_accuracy, sch.delta, stream),
        None => mlr_span(batch, a, k, cfg.svd_accuracy, sch.delta, stream),
    }
}

fn run(source: &dyn MlrSource, a0: Vector, sch: &Schedule, cfg: &DescentConfig, stream: Stream) -> Result<DescentOutcome> {
    let d = source.dim();
    if a0.len() != d {
        return Err(FmdError::DimensionMismatch { expected: d, got: a0.len() });
    }
    let mut a = a0;
    let mut trace = DescentTrace::default();
    let mut upper = None;
    let mut warm = None;
    let mut stalls = 0;
    let mut sigma = f64::INFINITY;
    for t in 0..cfg.iterations {
        let s = stream.child2(label::ITER, t as u64);
        let batch = source.draw(cfg.batch_size, s.child(label::SAMPLE));
        let r = batch.residuals(&a)?;
        let up = *upper.get_or_insert_with(|| upper_bound(cfg, &r, sch.p, sch.sigma_lower));
        let base = scale(&r, up, sch, cfg, warm)?;
        sigma = base.sigma;
        warm = Some(sigma);
        if base.floored || sigma < sch.target {
            return Ok(DescentOutcome { a, sigma, reached: true, stalled: false, trace });
        }
        let mbatch = source.draw(cfg.matrix_samples, s.child(label::MATRIX));
        let basis = span(&mbatch, &a, sigma, sch, cfg, s.child(label::SVD))?;
        let k = basis.u.ncols();
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
            let shift = &proj * &c;
            let rc: Vec<f64> = r.iter().zip(shift.iter()).map(|(r, p)| r - step * p).collect();
            let cand = scale(&rc, up, sch, cfg, Some(sigma))?;
            let verdict = compare_estimates(sigma, cand.sigma, sch.kappa1, sch.kappa2).verdict;
            record.verdicts.push(verdict);
            record.candidate_sigmas.push(cand.sigma);
            if verdict {
                record.accepted = Some(j);
                a += &basis.u * c * step;
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
                return Ok(DescentOutcome { a, sigma, reached: false, stalled: true, trace });
            }
        }
    }
    Ok(DescentOutcome { a, sigma, reached: false, stalled: false, trace })
}

/// Descent from the origin until `sigma* < 0.99 epsilon`.
pub fn fourier_moment_descent(
    source: &dyn MlrSource,
    hints: &Hints,
    delta: f64,
    epsilon: f64,
    cfg: &DescentConfig,
    stream: Stream,
) -> Result<DescentOutcome> {
    hints.validate()?;
    cfg.validate()?;
    check_unit_interval("epsilon", epsilon)?;
    check_unit_interval("delta", delta)?;
    let k = hints.k;
    let (kappa1, kappa2) = cfg.kappas(k);
    let sch = Schedule {
        k,
        p: degree(hints, cfg),
        sigma_lower: epsilon * cfg.sigma_lower_factor,
        target: 0.99 * epsilon,
        step_mult: cfg.step_constant * (k as f64).powf(-0.25),
        kappa1,
        kappa2,
        candidates: cfg.candidate_count(k, delta),
        delta,
    };
    run(source, Vector::zeros(source.dim()), &sch, cfg, stream)
}

/// Progress tolerances of the gap-preserving variant,
/// `(c/2, 3c/2) Delta^2 / sqrt(k)` with `c` the gap constant.
pub fn optimistic_kappas(cfg: &DescentConfig, hints: &Hints) -> (f64, f64) {
    let unit = cfg.gap_constant * hints.separation.powi(2) / (hints.k as f64).sqrt();
    let k2 = (1.5 * unit).min(1.0);
    ((0.5 * unit).min(k2 / 3.0), k2)
}

/// Gap-preserving descent from a fixed start `a0`, with step
/// `a_LR Delta k^{-1/4} sigma*`.
pub fn optimistic_descent(
    source: &dyn MlrSource,
    a0: &Vector,
    hints: &Hints,
    delta: f64,
    epsilon: f64,
    cfg: &DescentConfig,
    stream: Stream,
) -> Result<DescentOutcome> {
    hints.validate()?;
    cfg.validate()?;
    check_unit_interval("epsilon", epsilon)?;
    check_unit_interval("delta", delta)?;
    let k = hints.k;
    let (kappa1, kappa2) = optimistic_kappas(cfg, hints);
    let sch = Schedule {
        k,
        p: degree(hints, cfg),
        sigma_lower: epsilon * cfg.sigma_lower_factor,
        target: 0.99 * epsilon,
        step_mult: cfg.a_lr * hints.separation * (k as f64).powf(-0.25),
        kappa1,
        kappa2,
        candidates: cfg.candidate_count(k, delta),
        delta,
    };
    run(source, a0.clone(), &sch, cfg, stream)
}

/// Radii `sigma_lower k^{1/4} (1 + upsilon)^j` up to `k^{1/4}`, with the last
/// clamped to `k^{1/4}`.
pub fn init_mesh(sigma_lower: f64, upsilon: f64, k: usize) -> Result<Vec<f64>> {
    if !(sigma_lower > 0.0 && sigma_lower <= 1.0) {
        return Err(invalid("mesh needs 0 < sigma_lower <= 1"));
    }
    if !(upsilon > 0.0) || k == 0 {
        return Err(invalid("mesh needs upsilon > 0 and k >= 1"));
    }
    let top = (k as f64).powf(0.25);
    let len = ((1.0 / sigma_lower).ln() / (1.0 + upsilon).ln() - 1e-12).ceil().max(0.0) as usize + 1;
    let mut radii: Vec<f64> = (0..len).map(|j| (sigma_lower * top * (1.0 + upsilon).powi(j as i32)).min(top)).collect();
    *radii.last_mut().expect("mesh has at least one radius") = top;
    Ok(radii)
}

/// Whether some regressor is close to `v`: `sigma*^2 <= 2 epsilon^2` for the
/// residual at `v`.
pub fn check_outcome(
    source: &dyn MlrSource,
    v: &Vector,
    hints: &Hints,
    epsilon: f64,
    cfg: &DescentConfig,
    stream: Stream,
) -> Result<bool> {
    hints.validate()?;
    check_unit_interval("epsilon", epsilon)?;
    let batch = source.draw(cfg.batch_size, stream.child(label::CHECK));
    let r = batch.residuals(v)?;
    let p = degree(hints, cfg);
    let sigma_lower = epsilon * cfg.sigma_lower_factor;
    let up = upper_bound(cfg, &r, p, sigma_lower);
    match estimate_min_variance_warm(&r, up, sigma_lower, p, &cfg.minvar, None) {
        Ok(e) => Ok(e.floored || e.sigma * e.sigma <= 2.0 * epsilon * epsilon),
        Err(FmdError::TooConcentrated { .. }) => Ok(true),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnOutcome {
    pub estimates: Vec<Vector>,
    /// Every round or restart budget succeeded.
    pub complete: bool,
    /// Human-readable record of retries and failures.
    pub notes: Vec<String>,
    pub traces: Vec<DescentTrace>,
    pub samples: u64,
}

/// Peeling threshold `epsilon * peel_log_factor * ln d` (with `ln d >= 1`).
pub fn peel_threshold(cfg: &DescentConfig, epsilon: f64, d: usize) -> f64 {
    epsilon * cfg.peel_log_factor * (d as f64).ln().max(1.0)
}

/// Noiseless learner: `k` rounds of descent, boosting and peeling.
pub fn learn_without_noise(
    source: &dyn MlrSource,
    hints: &Hints,
    delta: f64,
    epsilon: f64,
    cfg: &DescentConfig,
    stream: Stream,
) -> Result<LearnOutcome> {
    hints.validate()?;
    cfg.validate()?;
    check_unit_interval("epsilon", epsilon)?;
    check_unit_interval("delta", delta)?;
    let counted = Counted::new(source);
    let d = source.dim();
    let k = hints.k;
    let eps_descent = (hints.separation * hints.p_min / 64.0).min(epsilon);
    let delta_round = delta / (3.0 * k as f64);
    let thr = peel_threshold(cfg, epsilon, d);
    let mut estimates: Vec<Vector> = Vec::new();
    let mut traces = Vec::new();
    let mut notes = Vec::new();
    let mut complete = true;
    for i in 0..k {
        let peeled = PeeledMlr { inner: &counted, peeled: estimates.iter().map(|w| (w.clone(), thr)).collect() };
        let left = (k - i) as f64;
        let sub = Hints {
            k: k - i,
            p_min: (hints.p_min / (1.0 - i as f64 * hints.p_min)).min(1.0 / left),
            separation: hints.separation,
        };
        let mut best = None;
        for attempt in 0..cfg.round_retries {
            let s = stream.child2(label::ROUND, i as u64).child(attempt as u64);
            let desc = fourier_moment_descent(&peeled, &sub, delta_round, eps_descent, cfg, s.child(label::ITER))?;
            if desc.stalled {
                notes.push(format!("round {i} attempt {attempt}: descent stalled at sigma* = {:.4e}", desc.sigma));
            }
            let refined = boost(&peeled, &desc.a, epsilon, &sub, &cfg.boost, &cfg.minvar, s.child(label::BOOST))?;
            let v = if refined.diverged { desc.a.clone() } else { refined.v };
            traces.push(desc.trace);
            let ok = check_outcome(&peeled, &v, &sub, epsilon, cfg, s.child(label::CHECK))?;
            best = Some(v);
            if ok {
                break;
            }
            notes.push(format!("round {i} attempt {attempt}: outcome check rejected the estimate"));
            if attempt + 1 == cfg.round_retries {
                complete = false;
            }
        }
        estimates.push(best.expect("round_retries >= 1"));
    }
    Ok(LearnOutcome { estimates, complete, notes, traces, samples: counted.count() })
}

/// Learner for noisy responses: restarts of the gap-preserving descent from
/// a mesh of radii in random directions, each boosted, checked and kept when
/// farther than `2 epsilon` from every estimate so far.
pub fn learn_with_noise(
    source: &dyn MlrSource,
    hints: &Hints,
    delta: f64,
    epsilon: f64,
    cfg: &DescentConfig,
    stream: Stream,
) -> Result<LearnOutcome> {
    hints.validate()?;
    cfg.validate()?;
    check_unit_interval("epsilon", epsilon)?;
    check_unit_interval("delta", delta)?;
    let counted = Counted::new(source);
    let d = source.dim();
    let k = hints.k;
    let delta_run = delta / (3.0 * k as f64);
    let mut estimates: Vec<Vector> = Vec::new();
    let mut traces = Vec::new();
    let mut notes = Vec::new();

    let tiny = random_unit(d, stream.child(label::TINY)) * (epsilon / 4.0);
    if check_outcome(&counted, &tiny, hints, epsilon, cfg, stream.child2(label::TINY, label::CHECK))? {
        notes.push("a regressor lies within epsilon of the origin".to_string());
        estimates.push(tiny);
    }

    let mesh = init_mesh((epsilon * cfg.sigma_lower_factor).min(1.0), cfg.mesh_upsilon, k)?;
    let restarts = cfg.restart_count(hints, delta);
    for w in 0..restarts {
        if estimates.len() >= k {
            break;
        }
        let s = stream.child2(label::RESTART, w as u64);
        let a0 = random_unit(d, s.child(label::DIRECTION)) * (mesh[w % mesh.len()] * cfg.a_scale);
        let desc = optimistic_descent(&counted, &a0, hints, delta_run, epsilon, cfg, s.child(label::ITER))?;
        let refined = boost(&counted, &desc.a, epsilon, hints, &cfg.boost, &cfg.minvar, s.child(label::BOOST))?;
        let v = if refined.diverged { desc.a.clone() } else { refined.v };
        traces.push(desc.trace);
        if !check_outcome(&counted, &v, hints, epsilon, cfg, s.child(label::CHECK))? {
            continue;
        }
        if estimates.iter().all(|e| (e - &v).norm() > 2.0 * epsilon) {
            estimates.push(v);
        }
    }
    let complete = estimates.len() == k;
    if !complete {
        notes.push(format!("found {} of {k} components in {restarts} restarts", estimates.len()));
    }
    Ok(LearnOutcome { estimates, complete, notes, traces, samples: counted.count() })
}
