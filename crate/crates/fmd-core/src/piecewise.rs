//! Piecewise polynomials with compact support and their truncated Fourier
//! moments in closed form.
//!
//! Each piece stores monomial coefficients in the local coordinate
//! `t = (x - left) / width`, `t in [0, 1]`.

use crate::error::{invalid, FmdError, Result};
use crate::model::ZeroMeanGmm;
use crate::quad;
use nalgebra::Complex;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const MAX_DEGREE: usize = 12;

type C64 = Complex<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewisePoly {
    pub support: [f64; 2],
    /// Interior breakpoints, strictly increasing.
    pub nodes: Vec<f64>,
    /// One coefficient vector per piece, lowest degree first.
    pub coeffs: Vec<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// Local polynomial helpers

fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * t + a)
}

fn derivative(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(i, &a)| a * i as f64).collect()
}

/// Coefficients of `q(s + shift)`.
fn taylor_shift(c: &[f64], shift: f64) -> Vec<f64> {
    let mut out = c.to_vec();
    let n = out.len();
    for i in 0..n {
        for j in (i..n - 1).rev() {
            out[j] += shift * out[j + 1];
        }
    }
    out
}

/// Coefficients of `q(u0 + (u1 - u0) s)`, i.e. `q` restricted to `[u0, u1]`
/// and re-expressed on `[0, 1]`.
pub fn restrict_local(c: &[f64], u0: f64, u1: f64) -> Vec<f64> {
    let w = u1 - u0;
    let mut out = taylor_shift(c, u0);
    let mut f = 1.0;
    for a in out.iter_mut() {
        *a *= f;
        f *= w;
    }
    out
}

/// Real roots of `q` in the open interval `(lo, hi)`, sorted. Roots are
/// isolated through the roots of the derivative and refined by bisection.
pub fn real_roots(c: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut c = c.to_vec();
    while c.len() > 1 && *c.last().unwrap() == 0.0 {
        c.pop();
    }
    if c.len() <= 1 {
        return vec![];
    }
    let mut cuts = vec![lo];
    cuts.extend(real_roots(&derivative(&c), lo, hi));
    cuts.push(hi);
    let mut roots = Vec::new();
    for w in cuts.windows(2) {
        let (mut a, mut b) = (w[0], w[1]);
        let (mut fa, fb) = (horner(&c, a), horner(&c, b));
        if fa == 0.0 {
            if a > lo && roots.last().is_none_or(|&r: &f64| (r - a).abs() > 1e-13) {
                roots.push(a);
            }
            continue;
        }
        if fa * fb >= 0.0 {
            continue;
        }
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if b - a <= 1e-15 * (1.0 + m.abs()) {
                break;
            }
            let fm = horner(&c, m);
            if fm == 0.0 {
                a = m;
                b = m;
                break;
            }
            if fa * fm < 0.0 {
                b = m;
            } else {
                a = m;
                fa = fm;
            }
        }
        let r = 0.5 * (a + b);
        if r > lo && r < hi && roots.last().is_none_or(|&q: &f64| (q - r).abs() > 1e-13) {
            roots.push(r);
        }
    }
    roots
}

// ---------------------------------------------------------------------------
// Trigonometric moments

/// `E_r(a) = int_0^1 x^r e^{i a x} dx` for `r = 0..=rmax`.
///
/// Indices `r <= |a|` use the upward integration-by-parts recurrence (stable
/// there); the rest come from a series for `E_rmax` followed by downward
/// recurrence, which is stable for `r > |a|`.
pub fn exp_moments(rmax: usize, a: f64) -> Vec<C64> {
    let mut e = vec![C64::new(0.0, 0.0); rmax + 1];
    let eia = C64::new(a.cos(), a.sin());
    let ia = C64::new(0.0, a);
    let up_to = if a.abs() >= 1.0 { (a.abs().floor() as usize).min(rmax) as isize } else { -1 };
    if up_to >= 0 {
        e[0] = (eia - 1.0) / ia;
        for r in 1..=up_to as usize {
            e[r] = (eia - e[r - 1] * r as f64) / ia;
        }
    }
    if (up_to as i64) < rmax as i64 {
        e[rmax] = exp_moment_series(rmax, a);
        let stop = (up_to + 1) as usize;
        for r in (stop + 1..=rmax).rev() {
            e[r - 1] = (eia - ia * e[r]) / r as f64;
        }
    }
    e
}

/// `E_r(a)` from `e^{ia} sum_n (-ia)^n / ((r+1)(r+2)...(r+n+1))`.
fn exp_moment_series(r: usize, a: f64) -> C64 {
    let mia = C64::new(0.0, -a);
    let mut term = C64::new(1.0 / (r as f64 + 1.0), 0.0);
    let mut sum = term;
    for n in 1..4000 {
        term = term * mia / (r as f64 + n as f64 + 1.0);
        sum += term;
        if term.norm() <= 1e-18 * sum.norm() {
            break;
        }
    }
    C64::new(a.cos(), a.sin()) * sum
}

/// `(C, S) = (int_0^1 x^r cos(ax) dx, int_0^1 x^r sin(ax) dx)`.
pub fn trig_moments(r: usize, a: f64) -> (f64, f64) {
    let e = exp_moments(r, a)[r];
    (e.re, e.im)
}

/// Shifts a piece that touches a clip level by rounding-sized amounts so its
/// extrema respect the bounds.
fn nudge_into(mut c: Vec<f64>, lo_val: f64, hi_val: f64) -> Vec<f64> {
    let extrema = |c: &[f64]| {
        let mut v = vec![horner(c, 0.0), horner(c, 1.0)];
        v.extend(real_roots(&derivative(c), 0.0, 1.0).into_iter().map(|r| horner(c, r)));
        v
    };
    for _ in 0..4 {
        let v = extrema(&c);
        let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bottom = v.iter().copied().fold(f64::INFINITY, f64::min);
        if top > hi_val {
            c[0] -= (top - hi_val).max(f64::EPSILON * hi_val.abs());
        } else if bottom < lo_val {
            c[0] += (lo_val - bottom).max(f64::EPSILON * lo_val.abs()).max(f64::MIN_POSITIVE);
        } else {
            break;
        }
    }
    c
}

// ---------------------------------------------------------------------------
// PiecewisePoly

impl PiecewisePoly {
    pub fn new(support: [f64; 2], nodes: Vec<f64>, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        let pp = PiecewisePoly { support, nodes, coeffs };
        pp.validate()?;
        Ok(pp)
    }

    /// Builds from the full break list `[lo, a_1, ..., hi]`.
    pub fn from_breaks(breaks: &[f64], coeffs: Vec<Vec<f64>>) -> Result<Self> {
        if breaks.len() < 2 {
            return Err(invalid("need at least two breaks"));
        }
        let n = breaks.len();
        PiecewisePoly::new([breaks[0], breaks[n - 1]], breaks[1..n - 1].to_vec(), coeffs)
    }

    pub fn zero(support: [f64; 2]) -> Self {
        PiecewisePoly { support, nodes: vec![], coeffs: vec![vec![0.0]] }
    }

    fn validate(&self) -> Result<()> {
        let [lo, hi] = self.support;
        if !lo.is_finite() || !hi.is_finite() {
            return Err(FmdError::InfiniteSupport);
        }
        if !(lo < hi) {
            return Err(invalid("support must satisfy lo < hi"));
        }
        if self.coeffs.len() != self.nodes.len() + 1 {
            return Err(invalid("need exactly one more piece than interior nodes"));
        }
        let b = self.breaks();
        if b.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("breakpoints must be strictly increasing inside the support"));
        }
        for c in &self.coeffs {
            if c.is_empty() || c.len() > MAX_DEGREE + 1 {
                return Err(invalid(format!("piece degree must be in 0..={MAX_DEGREE}")));
            }
            if c.iter().any(|a| !a.is_finite()) {
                return Err(invalid("non-finite coefficient"));
            }
        }
        Ok(())
    }

    pub fn pieces(&self) -> usize {
        self.coeffs.len()
    }

    pub fn degree(&self) -> usize {
        self.coeffs.iter().map(|c| c.len() - 1).max().unwrap_or(0)
    }

    /// `[lo, a_1, ..., a_{s-1}, hi]`.
    pub fn breaks(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.nodes.len() + 2);
        b.push(self.support[0]);
        b.extend_from_slice(&self.nodes);
        b.push(self.support[1]);
        b
    }

    fn piece_bounds(&self, i: usize) -> (f64, f64) {
        let lo = if i == 0 { self.support[0] } else { self.nodes[i - 1] };
        let hi = if i == self.nodes.len() { self.support[1] } else { self.nodes[i] };
        (lo, hi)
    }

    fn owner(&self, x: f64) -> Option<usize> {
        if x < self.support[0] || x > self.support[1] || x.is_nan() {
            return None;
        }
        Some(self.nodes.partition_point(|&a| a <= x).min(self.coeffs.len() - 1))
    }

    /// Value at `x`; zero outside the support.
    pub fn eval(&self, x: f64) -> f64 {
        match self.owner(x) {
            None => 0.0,
            Some(i) => {
                let (lo, hi) = self.piece_bounds(i);
                horner(&self.coeffs[i], (x - lo) / (hi - lo))
            }
        }
    }

    /// Exact integral over the support.
    pub fn integral(&self) -> f64 {
        (0..self.pieces())
            .map(|i| {
                let (lo, hi) = self.piece_bounds(i);
                let s: f64 = self.coeffs[i].iter().enumerate().map(|(j, a)| a / (j as f64 + 1.0)).sum();
                s * (hi - lo)
            })
            .sum()
    }

    /// Same function on a break list that contains every current break.
    pub fn refine(&self, breaks: &[f64]) -> Result<Self> {
        let mut coeffs = Vec::with_capacity(breaks.len() - 1);
        for w in breaks.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let i = self.owner(mid).ok_or_else(|| invalid("refinement outside support"))?;
            let (lo, hi) = self.piece_bounds(i);
            let h = hi - lo;
            coeffs.push(restrict_local(&self.coeffs[i], (w[0] - lo) / h, (w[1] - lo) / h));
        }
        PiecewisePoly::from_breaks(breaks, coeffs)
    }

    /// Splits the owning piece at an interior point; the function is unchanged.
    pub fn split_at(&self, x: f64) -> Result<Self> {
        let mut b = self.breaks();
        if x <= b[0] || x >= *b.last().unwrap() || b.contains(&x) {
            return Err(invalid("split point must be interior and new"));
        }
        let pos = b.partition_point(|&a| a < x);
        b.insert(pos, x);
        self.refine(&b)
    }

    /// Extends the support to `[lo, hi]` with zero pieces.
    pub fn extend_support(&self, lo: f64, hi: f64) -> Self {
        let mut out = self.clone();
        if lo < out.support[0] {
            out.nodes.insert(0, out.support[0]);
            out.coeffs.insert(0, vec![0.0]);
            out.support[0] = lo;
        }
        if hi > out.support[1] {
            out.nodes.push(out.support[1]);
            out.coeffs.push(vec![0.0]);
            out.support[1] = hi;
        }
        out
    }

    /// Pointwise `alpha * self + beta * other` on the union of break sets.
    pub fn combine(&self, alpha: f64, other: &PiecewisePoly, beta: f64) -> Result<Self> {
        let lo = self.support[0].min(other.support[0]);
        let hi = self.support[1].max(other.support[1]);
        let a = self.extend_support(lo, hi);
        let b = other.extend_support(lo, hi);
        let mut br: Vec<f64> = a.breaks().into_iter().chain(b.breaks()).collect();
        br.sort_by(|x, y| x.total_cmp(y));
        br.dedup();
        let a = a.refine(&br)?;
        let b = b.refine(&br)?;
        let coeffs = a
            .coeffs
            .iter()
            .zip(&b.coeffs)
            .map(|(p, q)| {
                let n = p.len().max(q.len());
                (0..n)
                    .map(|j| alpha * p.get(j).copied().unwrap_or(0.0) + beta * q.get(j).copied().unwrap_or(0.0))
                    .collect()
            })
            .collect();
        PiecewisePoly::from_breaks(&br, coeffs)
    }

    /// The reflection `x -> p(-x)`.
    pub fn reflect(&self) -> Self {
        let mut br: Vec<f64> = self.breaks().iter().rev().map(|x| -x).collect();
        for b in br.iter_mut() {
            if *b == 0.0 {
                *b = 0.0;
            }
        }
        let coeffs = self.coeffs.iter().rev().map(|c| restrict_local(c, 1.0, 0.0)).collect();
        PiecewisePoly::from_breaks(&br, coeffs).expect("reflection preserves validity")
    }

    /// `(p(x) + p(-x)) / 2`, exactly even.
    pub fn symmetrize(&self) -> Self {
        let s = self.combine(0.5, &self.reflect(), 0.5).expect("same-support combination");
        // Rebuild the right half by reflection so that evenness holds bit for bit.
        let br = s.breaks();
        let mid = br.partition_point(|&x| x < 0.0);
        let mut left_br: Vec<f64> = br[..mid].to_vec();
        let mut left_co: Vec<Vec<f64>> = s.coeffs[..mid].to_vec();
        if br[mid] != 0.0 {
            // 0 lies inside piece mid-1; split there.
            let i = mid - 1;
            let (lo, hi) = (br[i], br[mid]);
            left_co[i] = restrict_local(&s.coeffs[i], 0.0, (0.0 - lo) / (hi - lo));
        }
        left_br.push(0.0);
        let right_br: Vec<f64> = left_br.iter().rev().skip(1).map(|x| -x).collect();
        let right_co: Vec<Vec<f64>> = left_co.iter().rev().map(|c| restrict_local(c, 1.0, 0.0)).collect();
        let mut all_br = left_br;
        all_br.extend(right_br);
        left_co.extend(right_co);
        PiecewisePoly::from_breaks(&all_br, left_co).expect("symmetric rebuild is valid")
    }

    /// Largest value over the support (exact up to root refinement).
    pub fn max_value(&self) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for c in &self.coeffs {
            best = best.max(horner(c, 0.0)).max(horner(c, 1.0));
            for r in real_roots(&derivative(c), 0.0, 1.0) {
                best = best.max(horner(c, r));
            }
        }
        best
    }

    /// Smallest value over the support.
    pub fn min_value(&self) -> f64 {
        let neg = PiecewisePoly {
            support: self.support,
            nodes: self.nodes.clone(),
            coeffs: self.coeffs.iter().map(|c| c.iter().map(|a| -a).collect()).collect(),
        };
        -neg.max_value()
    }

    /// Pointwise `min(max(p, lo_val), hi_val)`, with new breaks at every
    /// crossing of either level.
    pub fn clip(&self, lo_val: f64, hi_val: f64) -> Result<Self> {
        if !(lo_val <= hi_val) {
            return Err(invalid("clip bounds must satisfy lo <= hi"));
        }
        let mut br = vec![self.support[0]];
        let mut coeffs = Vec::new();
        for i in 0..self.pieces() {
            let (lo, hi) = self.piece_bounds(i);
            let c = &self.coeffs[i];
            let mut cuts = vec![0.0];
            for level in [lo_val, hi_val] {
                if level.is_finite() {
                    let mut shifted = c.clone();
                    shifted[0] -= level;
                    cuts.extend(real_roots(&shifted, 0.0, 1.0));
                }
            }
            cuts.push(1.0);
            cuts.sort_by(|a, b| a.total_cmp(b));
            cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
            for w in cuts.windows(2) {
                let x1 = lo + (hi - lo) * w[1];
                let xe = if w[1] == 1.0 { hi } else { x1 };
                if xe <= *br.last().unwrap() {
                    continue;
                }
                let v = horner(c, 0.5 * (w[0] + w[1]));
                let piece = if v < lo_val {
                    vec![lo_val]
                } else if v > hi_val {
                    vec![hi_val]
                } else {
                    nudge_into(restrict_local(c, w[0], w[1]), lo_val, hi_val)
                };
                br.push(xe);
                coeffs.push(piece);
            }
        }
        PiecewisePoly::from_breaks(&br, coeffs)
    }

    /// Fourier transform `int p(x) e^{-2 pi i w x} dx` in closed form.
    pub fn fourier_transform(&self, w: f64) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..self.pieces() {
            let (lo, hi) = self.piece_bounds(i);
            let h = hi - lo;
            let c = &self.coeffs[i];
            // int_0^1 t^j e^{-i b t} dt = conj(E_j(b)) for real b.
            let e = exp_moments(c.len() - 1, 2.0 * PI * w * h);
            let s: C64 = c.iter().zip(&e).map(|(a, e)| e.conj() * *a).sum();
            let phase = -2.0 * PI * w * lo;
            acc += C64::new(phase.cos(), phase.sin()) * s * h;
        }
        acc
    }

    /// Real part of `int_{-tau}^{tau} p^(w) w^l dw` in closed form.
    ///
    /// Each piece is cut into sub-pieces of frequency-width `2 pi tau h <= 1`;
    /// on each, the double integral is a rapidly convergent series in that
    /// width whose terms are exponential moments at the sub-piece offset.
    pub fn fourier_moment(&self, l: usize, tau: f64) -> Result<f64> {
        if l % 2 == 1 {
            return Err(FmdError::OddDegree(l));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(invalid("tau must be positive and finite"));
        }
        self.validate()?;
        const TERMS: usize = 24;
        let beta = 2.0 * PI * tau;
        let mut total = 0.0;
        let mut inv_fact = [1.0f64; TERMS + 1];
        for n in 1..=TERMS {
            inv_fact[n] = inv_fact[n - 1] / n as f64;
        }
        for i in 0..self.pieces() {
            let (lo, hi) = self.piece_bounds(i);
            let c = &self.coeffs[i];
            if c.iter().all(|&a| a == 0.0) {
                continue;
            }
            let m = ((beta * (hi - lo)).ceil() as usize).max(1);
            let hs = (hi - lo) / m as f64;
            let b = beta * hs;
            for sub in 0..m {
                let x0 = lo + hs * sub as f64;
                let q = if m == 1 {
                    c.clone()
                } else {
                    restrict_local(c, sub as f64 / m as f64, (sub + 1) as f64 / m as f64)
                };
                let e = exp_moments(l + TERMS, beta * x0);
                let mut piece = 0.0;
                for (j, &a) in q.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    let mut g = 0.0;
                    let mut bn = 1.0;
                    for n in 0..=TERMS {
                        let en = e[l + n];
                        // Re[(i)^n E]
                        let re = match n % 4 {
                            0 => en.re,
                            1 => -en.im,
                            2 => -en.re,
                            _ => en.im,
                        };
                        let t = bn * inv_fact[n] / (j + n + 1) as f64 * re;
                        g += t;
                        bn *= b;
                        if bn * inv_fact[(n + 1).min(TERMS)] < 1e-18 {
                            break;
                        }
                    }
                    piece += a * g;
                }
                total += piece * hs;
            }
        }
        Ok(2.0 * tau.powi(l as i32 + 1) * total)
    }
}

/// `int (p - density(g))^2` by adaptive quadrature over the union of the
/// support and `[-8 sigma_max, 8 sigma_max]`.
pub fn l2_distance_sq(pp: &PiecewisePoly, g: &ZeroMeanGmm) -> f64 {
    let r = 8.0 * g.sigma_max();
    let lo = pp.support[0].min(-r);
    let hi = pp.support[1].max(r);
    let mut br = vec![lo];
    br.extend(pp.breaks().into_iter().filter(|&x| x > lo && x < hi));
    for s in &g.sigmas {
        for k in [-4.0, -1.0, 0.0, 1.0, 4.0] {
            let x = k * s;
            if x > lo && x < hi {
                br.push(x);
            }
        }
    }
    br.push(hi);
    br.sort_by(|a, b| a.total_cmp(b));
    br.dedup();
    let f = |x: f64| (pp.eval(x) - g.pdf(x)).powi(2);
    br.windows(2)
        .map(|w| quad::integrate(f, w[0], w[1], 1e-10 / br.len() as f64, 1e-12, 2000).value)
        .sum()
}

/// C^1 piecewise-cubic Hermite interpolant of `f` (with derivative `df`) on
/// the given breaks.
pub fn hermite_fit(f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64, breaks: &[f64]) -> Result<PiecewisePoly> {
    let coeffs = breaks
        .windows(2)
        .map(|w| {
            let h = w[1] - w[0];
            let (y0, y1) = (f(w[0]), f(w[1]));
            let (m0, m1) = (df(w[0]) * h, df(w[1]) * h);
            vec![y0, m0, 3.0 * (y1 - y0) - 2.0 * m0 - m1, 2.0 * (y0 - y1) + m0 + m1]
        })
        .collect();
    PiecewisePoly::from_breaks(breaks, coeffs)
}

/// Evenly spaced breaks.
pub fn uniform_breaks(lo: f64, hi: f64, pieces: usize) -> Vec<f64> {
    (0..=pieces).map(|i| lo + (hi - lo) * i as f64 / pieces as f64).collect()
}
