use fmd_core::density::{estimate_density, tuned_piece_budget, PieceBudget};
use fmd_core::piecewise::{hermite_fit, l2_distance_sq, uniform_breaks};
use fmd_core::quad;
use fmd_core::{FmdError, Stream, ZeroMeanGmm};
use std::f64::consts::PI;

fn normal_sample(sigma: &[f64], weights: &[f64], n: usize, seed: u64) -> (ZeroMeanGmm, Vec<f64>) {
    let g = ZeroMeanGmm::new(weights.to_vec(), sigma.to_vec()).unwrap();
    let v = g.draw(n, Stream::root(seed));
    (g, v)
}

#[test]
fn standard_normal_within_l2_target() {
    let (g, v) = normal_sample(&[1.0], &[1.0], 100_000, 1);
    let pp = estimate_density(&v, 0.5, 0.01, 0.1).unwrap();
    let d = l2_distance_sq(&pp, &g);
    assert!(d <= 0.01, "{d}");
}

#[test]
fn output_is_clipped_symmetric_subdensity() {
    let (_, v) = normal_sample(&[0.3, 2.0], &[0.5, 0.5], 100_000, 2);
    let lower = 0.5;
    let pp = estimate_density(&v, lower, 0.01, 0.1).unwrap();
    let cap = 1.0 / ((2.0 * PI).sqrt() * lower);
    assert!(pp.max_value() <= cap);
    assert!(pp.min_value() >= 0.0);
    let total = pp.integral();
    assert!(total <= 1.05, "{total}");
    for x in [0.0, 0.1, 0.77, 1.9, 5.3] {
        // Coefficients mirror exactly; evaluation differs by at most an ulp.
        assert!((pp.eval(x) - pp.eval(-x)).abs() <= 1e-15 * pp.eval(x).abs());
    }
}

#[test]
fn degenerate_sample_rejected() {
    let v = vec![0.0; 100_000];
    assert_eq!(estimate_density(&v, 0.5, 0.01, 0.1), Err(FmdError::TooConcentrated { sigma_lower: 0.5 }));
    assert!(estimate_density(&v, 0.0, 0.01, 0.1).is_err());
    assert!(matches!(estimate_density(&v[..10], 0.5, 0.01, 0.1), Err(FmdError::TooFewSamples { .. })));
}

#[test]
fn budget_formula_and_monotonicity() {
    assert_eq!(tuned_piece_budget(1.0 - 1e-12, 1.0, 1, 0.5), PieceBudget { pieces: 4, degree: 1, samples: 64 });
    let b = tuned_piece_budget(0.01, 0.1, 2, 0.1);
    let lg = (1.0f64 / 0.001).ln();
    assert_eq!(b.pieces, (2.0 * 2.0 * lg.ceil()) as usize);
    assert_eq!(b.degree, 7);
    assert_eq!(b.samples, (0.25 * 2.0 / 1e-4 * lg * 10f64.ln()).ceil() as usize);
    for eta in [0.2, 0.05, 0.01, 0.002] {
        let a = tuned_piece_budget(eta, 0.3, 2, 0.1);
        let h = tuned_piece_budget(eta / 2.0, 0.3, 2, 0.1);
        assert!(h.samples >= 2 * a.samples);
        assert!(h.pieces >= a.pieces && h.degree >= a.degree);
    }
}

#[test]
fn l2_error_transfers_to_fourier_moments() {
    // |int_{-tau}^{tau} w^p (F^ - G^)| <= tau^p sqrt(2 tau) ||F - G||_2
    let g = ZeroMeanGmm::new(vec![0.5, 0.5], vec![0.6, 1.5]).unwrap();
    let pdf = |x: f64| g.pdf(x);
    let dpdf = |x: f64| {
        g.weights.iter().zip(&g.sigmas).map(|(w, s)| -w * x / (s * s) * (-0.5 * x * x / (s * s)).exp() / (s * (2.0 * PI).sqrt())).sum::<f64>()
    };
    let fit = hermite_fit(pdf, dpdf, &uniform_breaks(-10.0, 10.0, 24)).unwrap();
    let l2 = l2_distance_sq(&fit, &g).sqrt();
    for (p, tau) in [(2, 1.0), (8, 1.5), (12, 2.0)] {
        let truth = 2.0
            * quad::integrate_panels(
                |w| w.powi(p) * g.weights.iter().zip(&g.sigmas).map(|(a, s)| a * (-2.0 * PI * PI * s * s * w * w).exp()).sum::<f64>(),
                0.0,
                tau,
                16,
                0.0,
                1e-13,
            )
            .value;
        let m = fit.fourier_moment(p as usize, tau).unwrap();
        let bound = tau.powi(p) * (2.0 * tau).sqrt() * l2;
        assert!((m - truth).abs() <= bound, "p={p}: |{m} - {truth}| > {bound}");
    }
}
