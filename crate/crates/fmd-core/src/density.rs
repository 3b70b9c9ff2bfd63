//! Univariate density estimation into a symmetric, clipped piecewise
//! polynomial.
//!
//! The estimate is a Gaussian kernel density of the symmetrized sample,
//! computed from linearly binned masses. Each piece matches the kernel
//! density's value and slope at both ends (so the result is C1) and fits the
//! interior by least squares in degree `D`. Adjacent pieces are merged while
//! the merged fit stays within tolerance, and the result is clipped to
//! `[0, 1/(sqrt(2 pi) sigma_lower)]`.
//!
//! Continuity matters for the Fourier moments: a jump at a break gives the
//! transform a `1/w` tail, which high-degree moments amplify.

use crate::error::{invalid, FmdError, Result};
use crate::par;
use crate::piecewise::PiecewisePoly;
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

const C_PIECES: f64 = 2.0;
const C_SAMPLES: f64 = 0.25;
const MAX_GRID: usize = 1 << 16;
const KERNEL_REACH: f64 = 7.0;
const MERGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PieceBudget {
    pub pieces: usize,
    pub degree: usize,
    pub samples: usize,
}

/// Piece count, degree and sample requirement for an L2 target `eta`.
pub fn tuned_piece_budget(eta: f64, sigma_lower: f64, k_hint: usize, delta: f64) -> PieceBudget {
    let lg = (1.0 / (eta * sigma_lower)).ln().max(0.0);
    let pieces = ((C_PIECES * k_hint as f64 * lg.ceil()) as usize).max(4);
    let degree = ((1.0 / eta).log2().ceil().max(0.0) as usize).clamp(1, 8);
    let n = C_SAMPLES * k_hint as f64 / (eta * eta) * lg * (1.0 / delta).ln().max(1.0);
    PieceBudget { pieces, degree, samples: (n.ceil() as usize).max(64) }
}

/// Kernel bandwidth [`estimate_density`] uses for a lower scale bound.
pub fn kde_bandwidth(sigma_lower: f64) -> f64 {
    0.5 * sigma_lower
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

/// Kernel density of the symmetrized sample from binned masses on `[0, R]`.
struct BinnedKde {
    step: f64,
    h: f64,
    mass: Vec<f64>,
    norm: f64,
}

impl BinnedKde {
    fn new(abs_values: &[f64], h: f64, reach: f64) -> Self {
        let cells = ((8.0 * reach / h).ceil() as usize).clamp(64, MAX_GRID);
        let step = reach / cells as f64;
        let mut mass = vec![0.0; cells + 2];
        for &v in abs_values {
            let u = v / step;
            let i = u.floor() as usize;
            if i > cells {
                continue;
            }
            let f = u - i as f64;
            mass[i] += 1.0 - f;
            mass[i + 1] += f;
        }
        let norm = 1.0 / (2.0 * abs_values.len() as f64 * h * (2.0 * PI).sqrt());
        BinnedKde { step, h, mass, norm }
    }

    /// Bandwidth including the spread added by linear binning.
    fn effective_bandwidth(&self) -> f64 {
        (self.h * self.h + self.step * self.step / 6.0).sqrt()
    }

    /// Value and derivative at `x >= 0`.
    fn eval(&self, x: f64) -> (f64, f64) {
        let reach = KERNEL_REACH * self.h;
        let last = self.mass.len() - 1;
        let lo = ((x - reach) / self.step).floor().max(0.0) as usize;
        let hi = (((x + reach) / self.step).ceil() as usize).min(last);
        let inv_h2 = 1.0 / (self.h * self.h);
        let (mut f, mut df) = (0.0, 0.0);
        let mut add = |u: f64, w: f64| {
            let k = (-0.5 * u * u * inv_h2).exp() * w;
            f += k;
            df -= u * inv_h2 * k;
        };
        for b in lo..=hi {
            add(x - b as f64 * self.step, self.mass[b]);
        }
        // Mirror image of each sample at -v.
        if x <= reach {
            let mirror_hi = (((reach - x) / self.step).ceil() as usize).min(last);
            for b in 0..=mirror_hi {
                add(x + b as f64 * self.step, self.mass[b]);
            }
        }
        (f * self.norm, df * self.norm)
    }
}

fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &x| acc * t + x)
}

/// Degree-`deg` piece on `[a, b]` in the local coordinate that matches value
/// and slope at both ends and fits the interior by least squares. Returns the
/// coefficients and the largest deviation at the fitting nodes.
fn fit_piece(kde: &BinnedKde, a: f64, b: f64, ends: [(f64, f64); 2], deg: usize) -> (Vec<f64>, f64) {
    let w = b - a;
    let (f0, d0) = (ends[0].0, ends[0].1 * w);
    let (f1, d1) = (ends[1].0, ends[1].1 * w);
    // Cubic Hermite interpolant.
    let mut c = vec![f0, d0, 3.0 * (f1 - f0) - 2.0 * d0 - d1, 2.0 * (f0 - f1) + d0 + d1];
    let m = 3 * (deg + 1);
    let ts: Vec<f64> = (0..m).map(|j| 0.5 - 0.5 * ((2 * j + 1) as f64 * PI / (2 * m) as f64).cos()).collect();
    let target: Vec<f64> = ts.iter().map(|t| kde.eval(a + w * t).0).collect();
    if deg > 3 {
        // Correction t^2 (1-t)^2 r(t) with deg(r) = deg - 4 keeps the end data.
        let extra = deg - 3;
        let bump = |t: f64| (t * (1.0 - t)).powi(2);
        let rhs = DVector::from_iterator(m, ts.iter().zip(&target).map(|(t, y)| y - horner(&c, *t)));
        let mat = DMatrix::from_fn(m, extra, |i, j| bump(ts[i]) * ts[i].powi(j as i32));
        if let Ok(r) = mat.svd(true, true).solve(&rhs, 1e-14) {
            c.resize(deg + 1, 0.0);
            for (j, rj) in r.iter().enumerate() {
                c[j + 2] += rj;
                c[j + 3] -= 2.0 * rj;
                c[j + 4] += rj;
            }
        }
    }
    let err = ts.iter().zip(&target).map(|(t, y)| (horner(&c, *t) - y).abs()).fold(0.0, f64::max);
    (c, err)
}

fn validate(values: &[f64], sigma_lower: f64, eta: f64, delta: f64) -> Result<PieceBudget> {
    if !(sigma_lower > 0.0 && sigma_lower.is_finite()) {
        return Err(invalid("sigma_lower must be positive"));
    }
    if !(eta > 0.0 && eta < 1.0 && delta > 0.0 && delta < 1.0) {
        return Err(invalid("eta and delta must lie in (0, 1)"));
    }
    let budget = tuned_piece_budget(eta, sigma_lower, 1, delta);
    if values.len() < budget.samples {
        return Err(FmdError::TooFewSamples { need: budget.samples, got: values.len() });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite sample"));
    }
    Ok(budget)
}

/// Piecewise-polynomial estimate of the symmetrized density of `values`.
pub fn estimate_density(values: &[f64], sigma_lower: f64, eta: f64, delta: f64) -> Result<PiecewisePoly> {
    Ok(estimate_density_with_bandwidth(values, sigma_lower, eta, delta, kde_bandwidth(sigma_lower))?.0)
}

/// As [`estimate_density`] with an explicit kernel bandwidth. Also returns the
/// effective bandwidth of the smoothing actually applied.
pub fn estimate_density_with_bandwidth(
    values: &[f64],
    sigma_lower: f64,
    eta: f64,
    delta: f64,
    h: f64,
) -> Result<(PiecewisePoly, f64)> {
    let budget = validate(values, sigma_lower, eta, delta)?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid("bandwidth must be positive"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    if iqr < sigma_lower / 10.0 {
        return Err(FmdError::TooConcentrated { sigma_lower });
    }
    let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    abs.sort_by(|a, b| a.total_cmp(b));
    let std = (abs.iter().map(|v| v * v).sum::<f64>() / abs.len() as f64).sqrt();
    let reach = quantile_sorted(&abs, 0.9999).max(8.0 * std) + KERNEL_REACH * h;
    let kde = BinnedKde::new(&abs, h, reach);

    // Equal-mass breaks on the half line, refined to width at most h/4.
    let half = (budget.pieces / 2).max(2);
    let mut breaks = vec![0.0];
    for j in 1..half {
        let q = quantile_sorted(&abs, j as f64 / half as f64);
        if q > breaks.last().unwrap() + 1e-9 * reach && q < reach * (1.0 - 1e-9) {
            breaks.push(q);
        }
    }
    breaks.push(reach);
    let mut fine = vec![0.0];
    for w in breaks.windows(2) {
        let parts = (4.0 * (w[1] - w[0]) / h).ceil().max(1.0) as usize;
        for j in 1..=parts {
            fine.push(w[0] + (w[1] - w[0]) * j as f64 / parts as f64);
        }
    }
    let ends = par::map(fine.len(), |i| kde.eval(fine[i]));

    // Greedy adjacent merge; merged pieces stay no wider than h.
    let peak = ends.iter().map(|e| e.0).fold(0.0, f64::max);
    let tol = MERGE_TOL * peak;
    let deg = budget.degree.max(3);
    let mut kept = vec![fine[0]];
    let mut coeffs = Vec::new();
    let mut start = 0;
    let mut end = 1;
    let mut current = fit_piece(&kde, fine[0], fine[1], [ends[0], ends[1]], deg).0;
    while end < fine.len() - 1 {
        let (c, err) = fit_piece(&kde, fine[start], fine[end + 1], [ends[start], ends[end + 1]], deg);
        if err <= tol && fine[end + 1] - fine[start] <= h * (1.0 + 1e-12) {
            current = c;
        } else {
            kept.push(fine[end]);
            coeffs.push(std::mem::take(&mut current));
            start = end;
            current = fit_piece(&kde, fine[start], fine[end + 1], [ends[start], ends[end + 1]], deg).0;
        }
        end += 1;
    }
    kept.push(fine[end]);
    coeffs.push(current);

    // Clip the half line, then mirror, so the two halves agree.
    let cap = 1.0 / ((2.0 * PI).sqrt() * sigma_lower);
    let right = PiecewisePoly::from_breaks(&kept, coeffs)?.clip(0.0, cap)?;
    let left = right.reflect();
    let mut all_breaks = left.breaks();
    all_breaks.pop();
    all_breaks.extend(right.breaks());
    let mut all_coeffs = left.coeffs;
    all_coeffs.extend(right.coeffs);
    Ok((PiecewisePoly::from_breaks(&all_breaks, all_coeffs)?, kde.effective_bandwidth()))
}
