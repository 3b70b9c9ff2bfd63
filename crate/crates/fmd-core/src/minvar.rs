//! Moments of zero-mean Gaussian mixtures and estimators of the smallest
//! component scale from Fourier moments.
//!
//! For a single component `N(0, sigma^2)` the transform is
//! `exp(-2 pi^2 sigma^2 w^2)`, whose full-line moment of even degree `p` is
//! `(2 pi)^{-p-1/2} (p-1)!! sigma^{-(p+1)}`. Large `p` makes the narrowest
//! component dominate a mixture's moment.
//!
//! The sampled estimator smooths the empirical law with `N(0, h^2)`, which
//! makes the full-line moment finite and equal to a sample mean of Hermite
//! functions. The ratio of the degree `p + 2` and `p` moments gives the
//! smoothed scale without reference to the mixing weights, and the known
//! bandwidth is subtracted in quadrature. The bandwidth follows the estimate
//! through a short fixed-point iteration.

use crate::config::{MinVarConfig, MinVarMethod, MomentStatistic};
use crate::density;
use crate::error::{invalid, FmdError, Result};
use crate::model::ZeroMeanGmm;
use crate::par;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};
use std::f64::consts::{PI, SQRT_2};

/// Smallest even integer `>= x`, at least 2.
pub fn even_ceil(x: f64) -> usize {
    let n = x.ceil().max(2.0) as usize;
    n + n % 2
}

/// Degree `20 ln(3 / (2 p_min)) + 1` (with configurable leading constant),
/// rounded up to even.
pub fn minvar_degree(p_min: f64, constant: f64) -> usize {
    even_ceil(constant * (3.0 / (2.0 * p_min)).ln() + 1.0)
}

/// Degree for the weight-free comparison rule,
/// `ceil(2 log2(4 / p_min^2) / (kappa2 - kappa1)) + 1` rounded up to even.
pub fn comparator_degree(p_min: f64, kappa1: f64, kappa2: f64) -> usize {
    even_ceil((2.0 * (4.0 / (p_min * p_min)).log2() / (kappa2 - kappa1)).ceil() + 1.0)
}

/// `ln((p-1)!!)` for even `p`.
pub fn ln_double_factorial(p: usize) -> f64 {
    (1..p).step_by(2).map(|j| (j as f64).ln()).sum()
}

fn check_even(p: usize) -> Result<()> {
    if p % 2 == 1 {
        Err(FmdError::OddDegree(p))
    } else if p < 2 {
        Err(invalid("degree must be at least 2"))
    } else {
        Ok(())
    }
}

/// `E[Z^p] = sum_i p_i sigma_i^p (p-1)!!`.
pub fn mixture_moment(g: &ZeroMeanGmm, p: usize) -> Result<f64> {
    check_even(p)?;
    let df = ln_double_factorial(p).exp();
    Ok(g.weights.iter().zip(&g.sigmas).map(|(w, s)| w * s.powi(p as i32)).sum::<f64>() * df)
}

/// Mean of `v^p`.
pub fn empirical_moment(values: &[f64], p: usize) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    par::sum(values.len(), |r| values[r].iter().map(|v| v.powi(p as i32)).sum()) / values.len() as f64
}

/// `(E[Z^p] / (p-1)!!)^{1/p}` from a raw moment.
pub fn max_variance_from_moment(moment: f64, p: usize) -> Result<f64> {
    check_even(p)?;
    if moment < 0.0 {
        return Err(invalid("negative even moment"));
    }
    Ok(((moment.ln() - ln_double_factorial(p)) / p as f64).exp())
}

/// Estimate of the largest component scale from the empirical `p`-th moment.
pub fn estimate_max_variance(values: &[f64], p: usize) -> Result<f64> {
    check_even(p)?;
    if values.is_empty() {
        return Err(FmdError::TooFewSamples { need: 1, got: 0 });
    }
    max_variance_from_moment(empirical_moment(values, p), p)
}

/// `ln` of the single-component moment normalization `(2 pi)^{-p-1/2} (p-1)!!`.
fn ln_unit_moment(p: usize) -> f64 {
    -(p as f64 + 0.5) * (2.0 * PI).ln() + ln_double_factorial(p)
}

/// Scale `sigma` of the single Gaussian whose full-line Fourier moment of
/// degree `p` equals `moment`.
pub fn sigma_from_moment(moment: f64, p: usize) -> f64 {
    sigma_from_ln_moment(moment.ln(), p)
}

fn sigma_from_ln_moment(ln_moment: f64, p: usize) -> f64 {
    (-(ln_moment - ln_unit_moment(p)) / (p as f64 + 1.0)).exp()
}

/// Analytic `int_{-tau}^{tau} w^p F^(w) dw` for a zero-mean mixture; `None`
/// integrates over the whole line.
pub fn gmm_fourier_moment(g: &ZeroMeanGmm, p: usize, tau: Option<f64>) -> Result<f64> {
    check_even(p)?;
    let a = (p as f64 + 1.0) / 2.0;
    let mut total = 0.0;
    for (w, &sigma) in g.weights.iter().zip(&g.sigmas) {
        if sigma == 0.0 {
            match tau {
                Some(t) => total += w * 2.0 * t.powi(p as i32 + 1) / (p as f64 + 1.0),
                None => return Ok(f64::INFINITY),
            }
            continue;
        }
        // Frequency-domain standard deviation.
        let s = 1.0 / (2.0 * PI * sigma);
        let ln_full = (p as f64 + 1.0) * s.ln() + a * 2f64.ln() + ln_gamma(a);
        let frac = match tau {
            Some(t) => gamma_lr(a, t * t / (2.0 * s * s)),
            None => 1.0,
        };
        total += w * ln_full.exp() * frac;
    }
    Ok(total)
}

/// `sigma*` from the exact full-line moment; equals `sigma_min` for a single
/// component and exceeds it by at most `p_min^{-1/(p+1)}` otherwise.
pub fn exact_min_variance(g: &ZeroMeanGmm, p: usize) -> Result<f64> {
    Ok(sigma_from_moment(gmm_fourier_moment(g, p, None)?, p))
}

/// Frequency cutoff `8 (1/(2 pi sigma_lower))^2 max(p, ln(2 L sqrt 2 / xi))`
/// with `L = sqrt(2 pi) / sigma_lower`.
pub fn frequency_cutoff(p: usize, sigma_lower: f64, xi: f64) -> f64 {
    let l = (2.0 * PI).sqrt() / sigma_lower;
    let s = 1.0 / (2.0 * PI * sigma_lower);
    8.0 * s * s * (p as f64).max((2.0 * l * SQRT_2 / xi).ln())
}

/// `sigma*` from the exact density's moment truncated at the frequency
/// cutoff, with `xi` a `1e-6` fraction of the smallest moment compatible with
/// `sigma_upper`.
pub fn oracle_min_variance(g: &ZeroMeanGmm, sigma_upper: f64, sigma_lower: f64, p: usize) -> Result<f64> {
    check_bounds(sigma_upper, sigma_lower)?;
    check_even(p)?;
    let xi = 1e-6 * (ln_unit_moment(p) - (p as f64 + 1.0) * sigma_upper.ln()).exp();
    let tau = frequency_cutoff(p, sigma_lower, xi);
    Ok(sigma_from_moment(gmm_fourier_moment(g, p, Some(tau))?, p))
}

fn check_bounds(sigma_upper: f64, sigma_lower: f64) -> Result<()> {
    if !(sigma_lower > 0.0 && sigma_lower.is_finite()) {
        return Err(invalid("sigma_lower must be positive"));
    }
    if !(sigma_lower <= sigma_upper) {
        return Err(invalid("sigma_lower must not exceed sigma_upper"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Sample-based estimator

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinVarEstimate {
    pub sigma: f64,
    /// Smoothing bandwidth at which `sigma` was computed.
    pub bandwidth: f64,
    pub degree: usize,
    pub samples: usize,
    pub iterations: usize,
    /// The estimate fell below `sigma_lower` or was not resolvable and was
    /// replaced by `sigma_lower`.
    pub floored: bool,
}

/// Means of `psi_p(z) e^{-z^2/2}` and `psi_{p+2}(z) e^{-z^2/2}` with
/// `z = x / (h sqrt 2)` and `psi_n` the normalized Hermite functions.
pub fn hermite_means(values: &[f64], h: f64, p: usize) -> [f64; 2] {
    let top = p + 2;
    let up: Vec<f64> = (0..top).map(|m| (2.0 / (m as f64 + 1.0)).sqrt()).collect();
    let back: Vec<f64> = (0..top).map(|m| (m as f64 / (m as f64 + 1.0)).sqrt()).collect();
    let c0 = PI.powf(-0.25);
    let scale = 1.0 / (h * SQRT_2);
    let s = par::sum_vec(values.len(), 2, |r, acc| {
        for &x in &values[r] {
            let z = x * scale;
            let z2 = z * z;
            if z2 > 700.0 {
                continue;
            }
            let mut prev = 0.0;
            let mut cur = c0 * (-z2).exp();
            for m in 0..top {
                let next = up[m] * z * cur - back[m] * prev;
                prev = cur;
                cur = next;
                if m + 1 == p {
                    acc[0] += cur;
                }
            }
            acc[1] += cur;
        }
    });
    let n = values.len() as f64;
    [s[0] / n, s[1] / n]
}

/// Full-line Fourier moment of degree `p` of the sample law smoothed by
/// `N(0, h^2)`, returned as `(sign, ln |M|)`.
pub fn smoothed_moment(values: &[f64], h: f64, p: usize) -> (f64, f64) {
    let [ap, _] = hermite_means(values, h, p);
    let a = 2.0 * PI * PI * h * h;
    let pf = p as f64;
    let ln_fact: f64 = (1..=p).map(|j| (j as f64).ln()).sum();
    let ln_c = 0.5 * (PI / a).ln() - pf * (2.0 * a.sqrt()).ln() + 0.5 * (pf * 2f64.ln() + ln_fact + 0.5 * PI.ln());
    let sign = if (p / 2) % 2 == 0 { 1.0 } else { -1.0 };
    let m = sign * ap;
    (m.signum(), ln_c + m.abs().ln())
}

/// Deconvolved scale at a fixed bandwidth, or `None` when the statistic is
/// not resolvable (wrong sign, or below the bandwidth).
pub fn smoothed_scale(values: &[f64], h: f64, p: usize, statistic: MomentStatistic) -> Option<f64> {
    let s2 = match statistic {
        MomentStatistic::Ratio => {
            let [ap, ap2] = hermite_means(values, h, p);
            let a = 2.0 * PI * PI * h * h;
            let pf = p as f64;
            let sf2 = -(ap2 / ap) * ((pf + 2.0) / (pf + 1.0)).sqrt() / (2.0 * a);
            if !(sf2 > 0.0) || !sf2.is_finite() {
                return None;
            }
            1.0 / (4.0 * PI * PI * sf2)
        }
        MomentStatistic::Single => {
            let (sign, ln_m) = smoothed_moment(values, h, p);
            if sign <= 0.0 || !ln_m.is_finite() {
                return None;
            }
            sigma_from_ln_moment(ln_m, p).powi(2)
        }
    };
    let v = s2 - h * h;
    (v > 0.0).then(|| v.sqrt())
}

fn robust_scale(values: &[f64]) -> f64 {
    let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let mid = abs.len() / 2;
    let (_, m, _) = abs.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m / 0.6745
}

fn validate_input(values: &[f64], sigma_upper: f64, sigma_lower: f64, p: usize, cfg: &MinVarConfig) -> Result<()> {
    check_bounds(sigma_upper, sigma_lower)?;
    check_even(p)?;
    if p > cfg.max_degree {
        return Err(invalid(format!("degree {p} exceeds max_degree {}", cfg.max_degree)));
    }
    if values.len() < 64 {
        return Err(FmdError::TooFewSamples { need: 64, got: values.len() });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite sample"));
    }
    Ok(())
}

/// Estimate of the smallest component scale of a zero-mean mixture from
/// samples, assuming it lies in `[sigma_lower, sigma_upper]`.
pub fn estimate_min_variance(
    values: &[f64],
    sigma_upper: f64,
    sigma_lower: f64,
    p: usize,
    cfg: &MinVarConfig,
) -> Result<MinVarEstimate> {
    estimate_min_variance_warm(values, sigma_upper, sigma_lower, p, cfg, None)
}

/// As [`estimate_min_variance`], starting the bandwidth iteration from a
/// previous scale estimate when one is available.
pub fn estimate_min_variance_warm(
    values: &[f64],
    sigma_upper: f64,
    sigma_lower: f64,
    p: usize,
    cfg: &MinVarConfig,
    warm: Option<f64>,
) -> Result<MinVarEstimate> {
    validate_input(values, sigma_upper, sigma_lower, p, cfg)?;
    match cfg.method {
        MinVarMethod::Smoothed => Ok(smoothed_estimate(values, sigma_upper, sigma_lower, p, cfg, warm)),
        MinVarMethod::Piecewise => piecewise_estimate(values, sigma_lower, p, cfg),
    }
}

fn smoothed_estimate(
    values: &[f64],
    sigma_upper: f64,
    sigma_lower: f64,
    p: usize,
    cfg: &MinVarConfig,
    warm: Option<f64>,
) -> MinVarEstimate {
    let c = cfg.bandwidth_factor;
    let floor = c * sigma_lower;
    let start = warm.unwrap_or_else(|| robust_scale(values)).clamp(sigma_lower, sigma_upper);
    let mut h = c * start;
    let mut best: Option<(f64, f64)> = None;
    let mut iterations = 0;
    for _ in 0..cfg.bandwidth_iterations {
        iterations += 1;
        match smoothed_scale(values, h, p, cfg.statistic) {
            Some(s) => {
                best = Some((s, h));
                let next = (c * s).max(floor);
                let done = (next - h).abs() <= cfg.bandwidth_tolerance * h;
                h = next;
                if done {
                    break;
                }
            }
            None => {
                if h <= floor {
                    break;
                }
                h = (h / 4.0).max(floor);
            }
        }
    }
    let (sigma, bandwidth, floored) = match best {
        Some((s, bw)) if s >= sigma_lower => (s, bw, false),
        Some((_, bw)) => (sigma_lower, bw, true),
        None => (sigma_lower, h, true),
    };
    MinVarEstimate { sigma, bandwidth, degree: p, samples: values.len(), iterations, floored }
}

fn piecewise_estimate(values: &[f64], sigma_lower: f64, p: usize, cfg: &MinVarConfig) -> Result<MinVarEstimate> {
    let bw = cfg.bandwidth_factor * sigma_lower;
    let (g, h) = density::estimate_density_with_bandwidth(values, sigma_lower, cfg.density_eta, 0.1, bw)?;
    let sf = 1.0 / (2.0 * PI * (sigma_lower * sigma_lower + h * h).sqrt());
    let tau = ((p as f64 + 3.0).sqrt() + 6.0) * sf;
    let s2 = match cfg.statistic {
        MomentStatistic::Ratio => {
            let mp = g.fourier_moment(p, tau)?;
            let mp2 = g.fourier_moment(p + 2, tau)?;
            let sf2 = mp2 / ((p as f64 + 1.0) * mp);
            (sf2 > 0.0).then(|| 1.0 / (4.0 * PI * PI * sf2))
        }
        MomentStatistic::Single => {
            let m = g.fourier_moment(p, tau)?;
            (m > 0.0).then(|| sigma_from_moment(m, p).powi(2))
        }
    };
    let v = s2.map(|s2| s2 - h * h).filter(|v| *v > sigma_lower * sigma_lower);
    Ok(MinVarEstimate {
        sigma: v.map_or(sigma_lower, f64::sqrt),
        bandwidth: h,
        degree: p,
        samples: values.len(),
        iterations: 1,
        floored: v.is_none(),
    })
}

/// Doubles the sample until two successive estimates agree within
/// `cfg.adaptive_agreement` or the cap is reached. `draw(n)` must return `n`
/// fresh values.
pub fn estimate_min_variance_adaptive<F>(
    mut draw: F,
    sigma_upper: f64,
    sigma_lower: f64,
    p: usize,
    cfg: &MinVarConfig,
) -> Result<MinVarEstimate>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    let mut values = draw(cfg.adaptive_start)?;
    let mut prev = estimate_min_variance(&values, sigma_upper, sigma_lower, p, cfg)?;
    while values.len() * 2 <= cfg.adaptive_cap {
        let more = draw(values.len())?;
        values.extend(more);
        let cur = estimate_min_variance_warm(&values, sigma_upper, sigma_lower, p, cfg, Some(prev.sigma))?;
        let agree = (cur.sigma - prev.sigma).abs() <= cfg.adaptive_agreement * prev.sigma;
        prev = cur;
        if agree {
            break;
        }
    }
    Ok(prev)
}

// ---------------------------------------------------------------------------
// Comparison

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// `true` when the first mixture's smallest scale is judged larger.
    pub verdict: bool,
    pub sigma1: f64,
    pub sigma2: f64,
}

fn check_kappas(kappa1: f64, kappa2: f64) -> Result<()> {
    if !(kappa1 > 0.0 && kappa1 < kappa2 && kappa2 <= 1.0) {
        return Err(invalid("need 0 < kappa1 < kappa2 <= 1"));
    }
    Ok(())
}

/// Scale-ratio threshold separating the two sides of the comparison.
pub fn comparison_threshold(kappa1: f64, kappa2: f64) -> f64 {
    ((1.0 + kappa1) * (1.0 + kappa2)).sqrt()
}

/// Decides whether `sigma_min(F1) >= (1 + kappa1) sigma_min(F2)` (verdict
/// `true`) or `sigma_min(F1) <= (1 + kappa2) sigma_min(F2)` (verdict
/// `false`), from samples of both mixtures at a common degree `p`.
#[allow(clippy::too_many_arguments)]
pub fn compare_min_variances(
    values1: &[f64],
    values2: &[f64],
    sigma_upper: f64,
    sigma_lower: f64,
    kappa1: f64,
    kappa2: f64,
    p: usize,
    cfg: &MinVarConfig,
) -> Result<Comparison> {
    check_kappas(kappa1, kappa2)?;
    let e1 = estimate_min_variance(values1, sigma_upper, sigma_lower, p, cfg)?;
    let e2 = estimate_min_variance(values2, sigma_upper, sigma_lower, p, cfg)?;
    Ok(compare_estimates(e1.sigma, e2.sigma, kappa1, kappa2))
}

/// Comparison verdict from two scale estimates.
pub fn compare_estimates(sigma1: f64, sigma2: f64, kappa1: f64, kappa2: f64) -> Comparison {
    Comparison { verdict: sigma1 > comparison_threshold(kappa1, kappa2) * sigma2, sigma1, sigma2 }
}

/// The moment-ratio rule `M_p(F2) / M_p(F1) > p_min (1 + kappa2)^{p-1} / 2`
/// on exact full-line moments, at the degree from [`comparator_degree`].
pub fn compare_exact(g1: &ZeroMeanGmm, g2: &ZeroMeanGmm, kappa1: f64, kappa2: f64, p_min: f64) -> Result<bool> {
    check_kappas(kappa1, kappa2)?;
    let p = comparator_degree(p_min, kappa1, kappa2);
    let m1 = gmm_fourier_moment(g1, p, None)?;
    let m2 = gmm_fourier_moment(g2, p, None)?;
    let ln_threshold = (0.5 * p_min).ln() + (p as f64 - 1.0) * (1.0 + kappa2).ln();
    Ok(m2.ln() - m1.ln() > ln_threshold)
}
