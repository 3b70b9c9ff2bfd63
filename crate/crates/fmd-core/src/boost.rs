//! Local refinement of a regressor estimate by gradient steps on the
//! regularized cosine-integral objective, and the Gaussian identities that
//! bound its expected gradient.

use crate::config::{BoostConfig, Hints, LearningRate, MinVarConfig};
use crate::error::{invalid, Result};
use crate::minvar::{estimate_max_variance, estimate_min_variance_warm, even_ceil};
use crate::model::{dot, MlrBatch, Vector};
use crate::par;
use crate::quad;
use crate::rng::{label, Stream};
use crate::source::MlrSource;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// `-(1/N) sum 1{|r| >= xi} cos(pi |r| / xi) / r * x` with `r = <x, v> - y`.
pub fn cosine_gradient(batch: &MlrBatch, v: &Vector, xi: f64) -> Result<Vector> {
    if !(xi > 0.0) {
        return Err(invalid("xi must be positive"));
    }
    let d = batch.d;
    if v.len() != d {
        return Err(crate::FmdError::DimensionMismatch { expected: d, got: v.len() });
    }
    let n = batch.len();
    if n == 0 {
        return Ok(Vector::zeros(d));
    }
    let acc = par::sum_vec(n, d, |rows, acc| {
        for j in rows {
            let x = batch.row(j);
            let r = dot(x, v.as_slice()) - batch.y[j];
            if r.abs() < xi {
                continue;
            }
            let c = -(PI * r.abs() / xi).cos() / r;
            acc.iter_mut().zip(x).for_each(|(a, xi)| *a += c * xi);
        }
    });
    Ok(Vector::from_vec(acc) / n as f64)
}

/// `exp(-pi^2 beta^2 / (2 xi^2)) - E[1{|g| >= xi} cos(pi |g| / xi)]` for
/// `g ~ N(0, beta^2)`. The full-line expectation of the cosine is the first
/// term, so the difference is the integral over `|g| < xi`.
pub fn cosine_bracket(beta: f64, xi: f64) -> Result<f64> {
    if !(xi > 0.0 && beta > 0.0) {
        return Err(invalid("beta and xi must be positive"));
    }
    if xi > beta {
        return Err(invalid("cosine bracket needs xi <= beta"));
    }
    let norm = 1.0 / (beta * (2.0 * PI).sqrt());
    let f = |g: f64| norm * (-0.5 * g * g / (beta * beta)).exp() * (PI * g / xi).cos();
    Ok(2.0 * quad::integrate_panels(f, 0.0, xi, 4, 1e-15, 1e-13).value)
}

/// `<E[delta], a>` for the population gradient at offset `b = v - w` under a
/// single component with noise `varsigma`:
/// `<a, b> / s^2 * (bracket(s, xi) - exp(-pi^2 s^2 / (2 xi^2)))` with
/// `s^2 = |b|^2 + varsigma^2`.
pub fn gradient_correlation(b: &Vector, a: &Vector, xi: f64, varsigma: f64) -> Result<f64> {
    if b.len() != a.len() {
        return Err(crate::FmdError::DimensionMismatch { expected: b.len(), got: a.len() });
    }
    let s2 = b.norm_squared() + varsigma * varsigma;
    let s = s2.sqrt();
    if !(xi <= s) {
        return Err(invalid("gradient correlation needs xi <= sqrt(|b|^2 + varsigma^2)"));
    }
    let tail = (-PI * PI * s2 / (2.0 * xi * xi)).exp();
    Ok(a.dot(b) / s2 * (cosine_bracket(s, xi)? - tail))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostStep {
    pub v: Vec<f64>,
    pub xi: f64,
    pub eta: f64,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostOutcome {
    pub v: Vector,
    /// Iterate, scale estimate and step used at each iteration.
    pub steps: Vec<BoostStep>,
    /// The scale estimate reached the stopping rule.
    pub converged: bool,
    /// The scale estimate grew past `divergence_factor` times its start.
    pub diverged: bool,
    pub samples: u64,
}

/// Degree used to track the scale during boosting, `4 ln(1/p_min) + 6`.
pub fn boost_degree(p_min: f64) -> usize {
    even_ceil(4.0 * (1.0 / p_min).ln() + 6.0).max(6)
}

/// Gradient batch `c d / xi^4` within the configured bounds.
pub fn boost_batch(cfg: &BoostConfig, d: usize, xi: f64) -> usize {
    let n = cfg.batch_constant * d as f64 / xi.powi(4);
    if n.is_finite() {
        (n.ceil() as usize).clamp(cfg.min_batch, cfg.max_batch)
    } else {
        cfg.max_batch
    }
}

fn learning_rate(cfg: &BoostConfig, xi: f64, d: usize, separation: f64) -> f64 {
    match cfg.learning_rate {
        LearningRate::Conservative => xi.powi(6) / (2.0 * d as f64 * separation.powi(4)),
        LearningRate::Scaled => cfg.rate_constant * xi * xi,
    }
}

/// Refines a warm start `v` towards the nearest regressor until the scale
/// estimate `xi` of the residual satisfies `xi * 1.1 / 0.9 <= epsilon`.
pub fn boost(
    source: &dyn MlrSource,
    v: &Vector,
    epsilon: f64,
    hints: &Hints,
    cfg: &BoostConfig,
    minvar: &MinVarConfig,
    stream: Stream,
) -> Result<BoostOutcome> {
    hints.validate()?;
    cfg.validate()?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(invalid("epsilon must lie in (0, 1)"));
    }
    let d = source.dim();
    if v.len() != d {
        return Err(crate::FmdError::DimensionMismatch { expected: d, got: v.len() });
    }
    let p = boost_degree(hints.p_min).min(minvar.max_degree);
    let sigma_lower = epsilon / 10.0;
    let mut v = v.clone();
    let mut steps = Vec::new();
    let mut samples = 0u64;
    let mut warm = None;
    let mut start = None;
    let mut sigma_upper = None;
    for t in 0..cfg.max_iterations {
        let s = stream.child2(label::ITER, t as u64);
        let probe = source.draw(cfg.scale_batch, s.child(label::MINVAR));
        samples += probe.len() as u64;
        let r = probe.residuals(&v)?;
        let upper = *sigma_upper.get_or_insert_with(|| {
            estimate_max_variance(&r, p).map_or(1.0, |m| 2.0 * m).max(sigma_lower)
        });
        let est = match estimate_min_variance_warm(&r, upper.max(sigma_lower), sigma_lower, p, minvar, warm) {
            Ok(e) => e,
            Err(crate::FmdError::TooConcentrated { .. }) => return Ok(BoostOutcome { v, steps, converged: true, diverged: false, samples }),
            Err(e) => return Err(e),
        };
        warm = Some(est.sigma);
        let xi = est.sigma / 1.1;
        let xi0 = *start.get_or_insert(xi);
        if est.floored || xi * 1.1 / 0.9 <= epsilon {
            return Ok(BoostOutcome { v, steps, converged: true, diverged: false, samples });
        }
        if xi > cfg.divergence_factor * xi0 {
            return Ok(BoostOutcome { v, steps, converged: false, diverged: true, samples });
        }
        let n = boost_batch(cfg, d, xi);
        let batch = source.draw(n, s.child(label::BOOST));
        samples += batch.len() as u64;
        let grad = cosine_gradient(&batch, &v, xi)?;
        let eta = learning_rate(cfg, xi, d, hints.separation);
        steps.push(BoostStep { v: v.as_slice().to_vec(), xi, eta, batch: n });
        v -= grad * eta;
    }
    Ok(BoostOutcome { v, steps, converged: false, diverged: false, samples })
}
