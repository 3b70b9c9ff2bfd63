//! Moment-matching constructions: pairs of uniform zero-mean Gaussian
//! mixtures that agree on all moments through degree `2k - 1`, and the MLR
//! pairs they induce.
//!
//! With `sigma_i(z) = i + alpha z_i`, the map `M(z)_l = sum_i sigma_i(z)^{2l}`
//! (`l = 1..k-1`) has an antipodal coincidence `M(z) = M(-z)` on the unit
//! sphere. `F(z) = M(z) - M(-z)` is odd, and a root is found by minimizing
//! `|F|^2` with Levenberg-Marquardt steps in the tangent space.

use crate::error::{invalid, FmdError, Result};
use crate::minvar::mixture_moment;
use crate::model::{random_unit, MlrModel, Vector, ZeroMeanGmm};
use crate::rng::{label, Stream};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub const DEFAULT_STARTS: usize = 100;
const MAX_STEPS: usize = 500;
const ABS_TOL: f64 = 1e-9;
/// Relative floor against the summed term magnitudes, for large `k` where
/// `1e-9` absolute is below rounding.
const REL_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentMatch {
    /// Unit vector with its first nonzero coordinate positive.
    pub z: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub sigmas_prime: Vec<f64>,
    /// `max_l |M(z)_l - M(-z)_l|`.
    pub residual: f64,
    /// Multistarts consumed, including the successful one.
    pub starts: usize,
}

impl MomentMatch {
    /// `max_i min_j |sigma_i - sigma'_j|`.
    pub fn separation(&self) -> f64 {
        sigma_gap(&self.sigmas, &self.sigmas_prime)
    }

    pub fn mixtures(&self) -> Result<(ZeroMeanGmm, ZeroMeanGmm)> {
        let k = self.sigmas.len();
        let w = vec![1.0 / k as f64; k];
        Ok((ZeroMeanGmm::new(w.clone(), self.sigmas.clone())?, ZeroMeanGmm::new(w, self.sigmas_prime.clone())?))
    }
}

/// `max_i min_j |a_i - b_j|`.
pub fn sigma_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .map(|x| b.iter().map(|y| (x - y).abs()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// `F(z)_l` written as sums of odd binomial terms so the two sides never
/// cancel, together with the summed term magnitudes.
fn antipodal_difference(z: &[f64], alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let k = z.len();
    let mut f = vec![0.0; k - 1];
    let mut mag = vec![0.0; k - 1];
    for (l1, (fl, ml)) in f.iter_mut().zip(mag.iter_mut()).enumerate() {
        let n = 2 * (l1 + 1);
        for (i0, zi) in z.iter().enumerate() {
            let i = (i0 + 1) as f64;
            let h = alpha * zi;
            let mut term = 0.0;
            let mut binom = n as f64;
            for j in (1..n).step_by(2) {
                term += binom * i.powi((n - j) as i32) * h.powi(j as i32);
                binom *= ((n - j) * (n - j - 1)) as f64 / ((j + 1) * (j + 2)) as f64;
            }
            *fl += 2.0 * term;
            *ml += 2.0 * term.abs();
        }
    }
    (f, mag)
}

fn jacobian(z: &[f64], alpha: f64) -> DMatrix<f64> {
    let k = z.len();
    DMatrix::from_fn(k - 1, k, |l1, i0| {
        let n = 2 * (l1 + 1) as i32;
        let i = (i0 + 1) as f64;
        let h = alpha * z[i0];
        n as f64 * alpha * ((i + h).powi(n - 1) + (i - h).powi(n - 1))
    })
}

fn converged(f: &[f64], mag: &[f64]) -> bool {
    f.iter().zip(mag).all(|(f, m)| f.abs() <= ABS_TOL.max(REL_TOL * m))
}

/// Levenberg-Marquardt on the row-scaled residual, retracting to the sphere.
fn solve_from(z0: Vector, alpha: f64) -> Option<Vector> {
    let k = z0.len();
    let scale: Vec<f64> = (1..k).map(|l| (1..=k).map(|i| (i as f64).powi(2 * l as i32)).sum()).collect();
    let scaled = |z: &Vector| -> (Vector, bool) {
        let (f, mag) = antipodal_difference(z.as_slice(), alpha);
        let ok = converged(&f, &mag);
        (Vector::from_iterator(k - 1, f.iter().zip(&scale).map(|(f, s)| f / s)), ok)
    };
    let mut z = z0;
    let (mut g, mut ok) = scaled(&z);
    let mut mu = 1e-3;
    for _ in 0..MAX_STEPS {
        if ok {
            return Some(z);
        }
        let p = DMatrix::identity(k, k) - &z * z.transpose();
        let mut j = jacobian(z.as_slice(), alpha);
        for (r, s) in scale.iter().enumerate() {
            j.row_mut(r).scale_mut(1.0 / s);
        }
        let jt = j * &p;
        let lhs = jt.transpose() * &jt + DMatrix::identity(k, k) * mu;
        let step = lhs.cholesky()?.solve(&(-(jt.transpose() * &g)));
        let cand = (&z + &p * step).normalize();
        let (gc, okc) = scaled(&cand);
        if gc.norm() < g.norm() || okc {
            z = cand;
            g = gc;
            ok = okc;
            mu = (mu / 3.0).max(1e-15);
        } else {
            mu *= 4.0;
            if mu > 1e12 {
                return None;
            }
        }
    }
    ok.then_some(z)
}

/// Finds `z` on the unit sphere with `M(z) = M(-z)` and returns
/// `sigma_i = i + alpha z_i`, `sigma'_i = i - alpha z_i`.
pub fn moment_match_sigmas(k: usize, alpha: f64, starts: usize, stream: Stream) -> Result<MomentMatch> {
    if k < 2 {
        return Err(invalid("moment matching needs k >= 2"));
    }
    if !(alpha > 0.0 && alpha <= 0.25) {
        return Err(invalid("alpha must lie in (0, 1/4]"));
    }
    if starts == 0 {
        return Err(invalid("need at least one start"));
    }
    for s in 0..starts {
        let Some(mut z) = solve_from(random_unit(k, stream.child2(label::TRIAL, s as u64)), alpha) else {
            continue;
        };
        if z.iter().find(|v| v.abs() > 1e-12).is_some_and(|v| *v < 0.0) {
            z = -z;
        }
        let (f, _) = antipodal_difference(z.as_slice(), alpha);
        let sigmas = (0..k).map(|i| (i + 1) as f64 + alpha * z[i]).collect();
        let sigmas_prime = (0..k).map(|i| (i + 1) as f64 - alpha * z[i]).collect();
        return Ok(MomentMatch {
            z: z.as_slice().to_vec(),
            sigmas,
            sigmas_prime,
            residual: f.iter().fold(0.0, |m, v| m.max(v.abs())),
            starts: s + 1,
        });
    }
    Err(FmdError::NoConvergence(format!("no antipodal coincidence found in {starts} starts for k={k}")))
}

/// Raw moments of degrees `1..=max_degree`; odd ones are zero.
pub fn moment_table(g: &ZeroMeanGmm, max_degree: usize) -> Vec<f64> {
    (1..=max_degree)
        .map(|p| if p % 2 == 1 { 0.0 } else { mixture_moment(g, p).expect("even degree") })
        .collect()
}

/// The two `3k`-component models: the base regressors with weights
/// `p_i / Z`, plus `+-sigma_i v` (resp. `+-sigma'_i v`) each with weight
/// `(lambda / 2k) / Z`, where `Z = lambda + 1` and `k` is the number of
/// sigmas. With `lambda = 0` both are the base model.
pub fn build_mlr_pair(
    base: &MlrModel,
    v: &Vector,
    lambda: f64,
    sigmas: &[f64],
    sigmas_prime: &[f64],
) -> Result<(MlrModel, MlrModel)> {
    if v.len() != base.d() {
        return Err(FmdError::DimensionMismatch { expected: base.d(), got: v.len() });
    }
    if (v.norm() - 1.0).abs() > 1e-9 {
        return Err(invalid("direction must be a unit vector"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid("lambda must be finite and nonnegative"));
    }
    if sigmas.is_empty() || sigmas.len() != sigmas_prime.len() {
        return Err(FmdError::SizeMismatch("sigmas vs sigmas_prime".into()));
    }
    if lambda == 0.0 {
        return Ok((base.clone(), base.clone()));
    }
    let z = lambda + 1.0;
    let extra = lambda / (2.0 * sigmas.len() as f64) / z;
    let build = |ss: &[f64]| {
        let mut weights: Vec<f64> = base.weights.iter().map(|p| p / z).collect();
        let mut regs = base.regressors.clone();
        for s in ss {
            for sign in [1.0, -1.0] {
                weights.push(extra);
                regs.push(v * (sign * s));
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        MlrModel::new(weights, regs, base.noise_rate)
    };
    Ok((build(sigmas)?, build(sigmas_prime)?))
}
