//! Deterministic fixtures shared by the benchmarks.

use fmd_core::{MlrModel, PiecewisePoly, Stream, ZeroMeanGmm};

/// Piecewise polynomial on `[-1, 1]` with `pieces` equal pieces and
/// coefficients from a fixed trigonometric pattern.
pub fn staircase(pieces: usize, degree: usize) -> PiecewisePoly {
    let breaks: Vec<f64> = (0..=pieces).map(|i| -1.0 + 2.0 * i as f64 / pieces as f64).collect();
    let coeffs = (0..pieces)
        .map(|i| (0..=degree).map(|j| ((i * 7 + j * 3) as f64).sin()).collect())
        .collect();
    PiecewisePoly::from_breaks(&breaks, coeffs).expect("breaks are increasing")
}

/// Draws from a two-component zero-mean mixture with scales 0.5 and 2.
pub fn mixture_values(n: usize, seed: u64) -> Vec<f64> {
    ZeroMeanGmm::new(vec![0.5, 0.5], vec![0.5, 2.0]).expect("valid mixture").draw(n, Stream::root(seed))
}

/// A noiseless MLR model with `k` unit-separated regressors in `R^d`.
pub fn mlr_model(k: usize, d: usize, seed: u64) -> MlrModel {
    MlrModel::random(k, d, 1.0, 0.0, 1.0, Stream::root(seed)).expect("placement succeeds at unit separation")
}
