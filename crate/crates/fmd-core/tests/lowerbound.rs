use fmd_core::lowerbound::{build_mlr_pair, moment_match_sigmas, moment_table, sigma_gap, DEFAULT_STARTS};
use fmd_core::model::random_unit;
use fmd_core::{MlrModel, Stream, Vector, ZeroMeanGmm};
use proptest::prelude::*;

fn double_factorial(n: i64) -> f64 {
    (1..=n).rev().step_by(2).map(|v| v as f64).product()
}

/// Moment of degree `p` of a uniform mixture, evaluated directly.
fn uniform_moment(sigmas: &[f64], p: usize) -> f64 {
    if p % 2 == 1 {
        return 0.0;
    }
    sigmas.iter().map(|s| s.powi(p as i32)).sum::<f64>() / sigmas.len() as f64 * double_factorial(p as i64 - 1)
}

/// Moment of degree `p` of `<xbar, x> + c y` under an MLR model, using the
/// per-component variance `|xbar|^2 + c^2 (|w|^2 + noise^2) + 2 c <w, xbar>`.
fn projected_moment(m: &MlrModel, xbar: &Vector, c: f64, p: usize) -> f64 {
    if p % 2 == 1 {
        return 0.0;
    }
    m.weights
        .iter()
        .zip(&m.regressors)
        .map(|(w, r)| {
            let var = xbar.norm_squared() + c * c * (r.norm_squared() + m.noise_rate.powi(2)) + 2.0 * c * r.dot(xbar);
            w * var.powi((p / 2) as i32)
        })
        .sum::<f64>()
        * double_factorial(p as i64 - 1)
}

#[test]
fn closed_form_at_k2() {
    let m = moment_match_sigmas(2, 0.25, DEFAULT_STARTS, Stream::root(1)).unwrap();
    let r5 = 5f64.sqrt();
    assert!((m.z[0] - 2.0 / r5).abs() <= 1e-9 && (m.z[1] + 1.0 / r5).abs() <= 1e-9, "{:?}", m.z);
    for (got, want) in m.sigmas.iter().zip([1.0 + 0.5 / r5, 2.0 - 0.25 / r5]) {
        assert!((got - want).abs() <= 1e-9);
    }
    for (got, want) in m.sigmas_prime.iter().zip([1.0 - 0.5 / r5, 2.0 + 0.25 / r5]) {
        assert!((got - want).abs() <= 1e-9);
    }
    let sq = |s: &[f64]| 0.5 * s.iter().map(|v| v * v).sum::<f64>();
    assert!((sq(&m.sigmas) - sq(&m.sigmas_prime)).abs() <= 1e-9);
    assert!((m.separation() - 1.0 / r5).abs() <= 1e-9);
    assert!(m.separation() >= 0.1 / 2f64.sqrt());
}

#[test]
fn matched_pairs_agree_through_degree_2k_minus_1() {
    for k in 2..=4 {
        let m = moment_match_sigmas(k, 0.25, DEFAULT_STARTS, Stream::root(k as u64)).unwrap();
        assert!(m.residual <= 1e-9);
        let z: f64 = m.z.iter().map(|v| v * v).sum();
        assert!((z - 1.0).abs() <= 1e-12);
        for p in 1..2 * k {
            let a = uniform_moment(&m.sigmas, p);
            let b = uniform_moment(&m.sigmas_prime, p);
            assert!((a - b).abs() <= 1e-8, "k={k} p={p}: {a} vs {b}");
        }
        let a = uniform_moment(&m.sigmas, 2 * k);
        let b = uniform_moment(&m.sigmas_prime, 2 * k);
        assert!((a - b).abs() >= 1e-3, "k={k}: degree {} differs by only {}", 2 * k, (a - b).abs());
        for s in m.sigmas.iter().chain(&m.sigmas_prime) {
            assert!((0.5..=(k + 1) as f64).contains(s));
        }
        assert!(m.separation() >= 0.1 / (k as f64).sqrt());
        assert!(sigma_gap(&m.sigmas, &m.sigmas_prime) > 0.0);
        let (g1, g2) = m.mixtures().unwrap();
        let (t1, t2) = (moment_table(&g1, 2 * k - 1), moment_table(&g2, 2 * k - 1));
        for (a, b) in t1.iter().zip(&t2) {
            assert!((a - b).abs() <= 1e-8);
        }
    }
}

#[test]
fn moment_table_of_a_standard_normal() {
    let g = ZeroMeanGmm::new(vec![1.0], vec![1.0]).unwrap();
    for (got, want) in moment_table(&g, 6).iter().zip([0.0, 1.0, 0.0, 3.0, 0.0, 15.0]) {
        assert!((got - want).abs() <= 1e-12);
    }
}

#[test]
fn rejects_bad_arguments() {
    assert!(moment_match_sigmas(1, 0.25, 10, Stream::root(1)).is_err());
    assert!(moment_match_sigmas(3, 0.3, 10, Stream::root(1)).is_err());
    assert!(moment_match_sigmas(3, 0.25, 0, Stream::root(1)).is_err());
    let base = MlrModel::new(vec![1.0], vec![Vector::from_column_slice(&[1.0, 0.0])], 0.0).unwrap();
    let v = Vector::from_column_slice(&[0.0, 1.0]);
    assert!(build_mlr_pair(&base, &(&v * 2.0), 1.0, &[1.0], &[2.0]).is_err());
    assert!(build_mlr_pair(&base, &v, -1.0, &[1.0], &[2.0]).is_err());
    assert!(build_mlr_pair(&base, &v, 1.0, &[1.0], &[2.0, 3.0]).is_err());
}

fn base_model(d: usize) -> MlrModel {
    let mut a = Vector::zeros(d);
    a[0] = 1.0;
    let mut b = Vector::zeros(d);
    b[1] = -1.0;
    MlrModel::new(vec![0.4, 0.6], vec![a, b], 0.1).unwrap()
}

#[test]
fn zero_lambda_returns_the_base() {
    let base = base_model(4);
    let v = random_unit(4, Stream::root(2));
    let (a, b) = build_mlr_pair(&base, &v, 0.0, &[1.2, 1.9], &[0.8, 2.1]).unwrap();
    assert_eq!(a, base);
    assert_eq!(b, base);
}

#[test]
fn mlr_pair_structure_and_distance() {
    let d = 4;
    let base = base_model(d);
    let mut v = Vector::zeros(d);
    v[2] = 1.0;
    let m = moment_match_sigmas(2, 0.25, DEFAULT_STARTS, Stream::root(3)).unwrap();
    let (d1, d2) = build_mlr_pair(&base, &v, 1.5, &m.sigmas, &m.sigmas_prime).unwrap();
    assert_eq!(d1.k(), 3 * 2);
    let z = 2.5;
    for (got, want) in d1.weights.iter().zip([0.4 / z, 0.6 / z, 0.375 / z, 0.375 / z, 0.375 / z, 0.375 / z]) {
        assert!((got - want).abs() <= 1e-12);
    }
    let far = d1
        .regressors
        .iter()
        .map(|r| d2.regressors.iter().map(|s| (r - s).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    assert!(far >= 0.2, "{far}");
}

#[test]
fn mlr_pairs_agree_on_projected_moments() {
    for k in 2..=4usize {
        let d = 5;
        let base = base_model(d);
        let v = random_unit(d, Stream::root(10 + k as u64));
        let m = moment_match_sigmas(k, 0.25, DEFAULT_STARTS, Stream::root(k as u64)).unwrap();
        let (d1, d2) = build_mlr_pair(&base, &v, 0.8, &m.sigmas, &m.sigmas_prime).unwrap();
        for t in 0..10 {
            let xbar = random_unit(d, Stream::root(100 + t)) * 0.7;
            let c = 0.3 + 0.1 * t as f64;
            for p in 1..2 * k {
                let a = projected_moment(&d1, &xbar, c, p);
                let b = projected_moment(&d2, &xbar, c, p);
                assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "k={k} p={p}: {a} vs {b}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn k2_pairs_agree_for_any_direction(seed in 0u64..100_000, lambda in 0.01f64..5.0, c in -2.0f64..2.0) {
        let d = 3;
        let base = base_model(d);
        let v = random_unit(d, Stream::root(seed));
        let r5 = 5f64.sqrt();
        let s = [1.0 + 0.5 / r5, 2.0 - 0.25 / r5];
        let sp = [1.0 - 0.5 / r5, 2.0 + 0.25 / r5];
        let (d1, d2) = build_mlr_pair(&base, &v, lambda, &s, &sp).unwrap();
        let w: f64 = d1.weights.iter().sum();
        prop_assert!((w - 1.0).abs() <= 1e-12);
        let xbar = random_unit(d, Stream::root(seed + 1));
        for p in 1..4 {
            let a = projected_moment(&d1, &xbar, c, p);
            let b = projected_moment(&d2, &xbar, c, p);
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }
}
