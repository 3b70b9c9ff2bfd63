//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use fmd_core::piecewise::PiecewisePoly;
use fmd_core::quad;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// `int_0^1 x^r cos(ax) dx` and the sine analogue by adaptive quadrature.
pub fn trig_oracle(r: usize, a: f64) -> (f64, f64) {
    let panels = (a.abs() / 4.0).ceil().max(1.0) as usize;
    let c = quad::integrate_panels(|x: f64| x.powi(r as i32) * (a * x).cos(), 0.0, 1.0, panels, 1e-17, 1e-14);
    let s = quad::integrate_panels(|x: f64| x.powi(r as i32) * (a * x).sin(), 0.0, 1.0, panels, 1e-17, 1e-14);
    (c.value, s.value)
}

/// Real part of the Fourier transform, evaluated piece by piece with
/// Gauss-Legendre rules sized for the highest frequency `w_max`.
pub struct TransformOracle {
    nodes: Vec<(f64, f64)>,
}

impl TransformOracle {
    pub fn new(pp: &PiecewisePoly, w_max: f64) -> Self {
        let br = pp.breaks();
        let mut nodes = Vec::new();
        for b in br.windows(2) {
            let h = b[1] - b[0];
            let n = (1.4 * PI * w_max * h).ceil() as usize + 24;
            let (x, w) = quad::gauss_legendre(n);
            for (x, w) in x.iter().zip(&w) {
                let xx = b[0] + 0.5 * h * (x + 1.0);
                let mid = xx.clamp(b[0], b[1]);
                nodes.push((xx, 0.5 * h * w * pp.eval(mid)));
            }
        }
        TransformOracle { nodes }
    }

    pub fn re(&self, w: f64) -> f64 {
        self.nodes.iter().map(|(x, c)| c * (2.0 * PI * w * x).cos()).sum()
    }
}

/// `int_{-tau}^{tau} w^l Re p^(w) dw`: adaptive Gauss-Kronrod in frequency
/// over a Gauss-Legendre evaluation of the transform.
pub fn fourier_moment_oracle(pp: &PiecewisePoly, l: usize, tau: f64) -> f64 {
    let t = TransformOracle::new(pp, tau);
    let reach = pp.support[0].abs().max(pp.support[1].abs());
    let panels = (tau * reach * 2.0).ceil().max(1.0) as usize;
    2.0 * quad::integrate_panels(|w: f64| w.powi(l as i32) * t.re(w), 0.0, tau, panels, 1e-300, 1e-12).value
}

/// Random piecewise polynomial with `s` pieces of degree `deg` on a random
/// interval inside `[-scale, scale]`.
pub fn random_pp(rng: &mut ChaCha8Rng, s: usize, deg: usize, scale: f64) -> PiecewisePoly {
    let lo = -scale * rng.random::<f64>().max(0.02);
    let hi = scale * rng.random::<f64>().max(0.02);
    let mut cuts: Vec<f64> = (0..s - 1).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    cuts.sort_by(|a, b| a.total_cmp(b));
    let mut br = vec![lo];
    for c in cuts {
        if c - br.last().unwrap() > 1e-3 * (hi - lo) && hi - c > 1e-3 * (hi - lo) {
            br.push(c);
        }
    }
    br.push(hi);
    let coeffs = (0..br.len() - 1).map(|_| (0..=deg).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).collect();
    PiecewisePoly::from_breaks(&br, coeffs).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_close(got: f64, want: f64, rel: f64, abs: f64) -> bool {
    (got - want).abs() <= abs.max(rel * want.abs())
}

/// Replicated 3-point Gauss-Hermite design: nodes (-sqrt3, 0, sqrt3) with
/// multiplicities (1, 4, 1) per coordinate, which reproduces every Gaussian
/// moment of total degree <= 5 exactly.
pub fn hermite_design(dims: usize) -> Vec<Vec<f64>> {
    let nodes = [(-(3f64.sqrt()), 1), (0.0, 4), (3f64.sqrt(), 1)];
    let mut pts = vec![vec![]];
    for _ in 0..dims {
        let mut next = Vec::new();
        for p in &pts {
            for &(x, m) in &nodes {
                for _ in 0..m {
                    let mut q: Vec<f64> = p.clone();
                    q.push(x);
                    next.push(q);
                }
            }
        }
        pts = next;
    }
    pts
}
