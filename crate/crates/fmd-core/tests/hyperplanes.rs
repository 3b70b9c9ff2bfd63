use fmd_core::hyperplanes::{
    canonical_sign, check_outcome_hyperplanes, direction_from_regressor, hyperplane_boost, hyperplane_moment_descent,
    learn_hyperplanes, reduce_to_mlr, reduced_regressor, Reflection,
};
use fmd_core::model::{random_unit, score_recovery, Truth};
use fmd_core::source::{PeeledVectors, VectorSource};
use fmd_core::subspace::approx_block_svd;
use fmd_core::{DescentConfig, Hints, HyperplaneModel, Stream, Vector};
use nalgebra::DMatrix;
use proptest::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn unit(d: usize, i: usize) -> Vector {
    let mut v = Vector::zeros(d);
    v[i] = 1.0;
    v
}

/// `|Pi_i a|` with `Pi_i = I - v_i v_i^T`.
fn projected_norm(v: &Vector, a: &Vector) -> f64 {
    (a - v * v.dot(a)).norm()
}

fn min_projected(m: &HyperplaneModel, a: &Vector) -> f64 {
    m.directions.iter().map(|v| projected_norm(v, a)).fold(f64::INFINITY, f64::min)
}

fn signed_error(v: &Vector, w: &Vector) -> f64 {
    (v - w).norm().min((v + w).norm())
}

#[test]
fn projection_law() {
    let v = random_unit(5, Stream::root(1));
    let m = HyperplaneModel::new(vec![1.0], vec![v.clone()]).unwrap();
    let b = m.draw(100_000, Stream::root(2));
    for seed in 0..5 {
        let a = random_unit(5, Stream::root(10 + seed));
        let p = b.project(&a);
        let var = p.iter().map(|x| x * x).sum::<f64>() / p.len() as f64;
        let want = projected_norm(&v, &a).powi(2);
        assert!((var / want - 1.0).abs() <= 0.03, "{var} vs {want}");
    }
}

#[test]
fn span_of_the_analytic_matrix() {
    let d = 7;
    let vs: Vec<Vector> = (0..3).map(|i| random_unit(d, Stream::root(20 + i))).collect();
    let weights = [0.5, 0.3, 0.2];
    let mut m = DMatrix::zeros(d, d);
    for (p, v) in weights.iter().zip(&vs) {
        m += v * v.transpose() * *p;
    }
    let eta = 1e-3;
    let basis = approx_block_svd(|x| &m * x, d, 3, eta, 0.1, Stream::root(3)).unwrap();
    for v in &vs {
        assert!((basis.u.transpose() * v).norm() >= 1.0 - 2.0 * eta);
    }
}

#[test]
fn descent_single_hyperplane() {
    let m = HyperplaneModel::new(vec![1.0], vec![unit(4, 0)]).unwrap();
    let eps = 0.05;
    let o = hyperplane_moment_descent(&m, &Hints::uniform(1), 0.1, eps, &DescentConfig::default(), Stream::root(4)).unwrap();
    assert!(o.checked);
    assert!(signed_error(&o.v, &m.directions[0]) <= eps, "{}", o.v);
}

#[test]
fn descent_two_orthogonal_hyperplanes() {
    let m = HyperplaneModel::new(vec![0.5, 0.5], vec![unit(6, 0), unit(6, 1)]).unwrap();
    let eps = 0.05;
    let cfg = DescentConfig::default();
    let trials = 20;
    let mut hits = 0;
    for seed in 0..trials {
        let o = hyperplane_moment_descent(&m, &Hints::uniform(2), 0.1, eps, &cfg, Stream::root(100 + seed)).unwrap();
        for s in &o.trace.steps {
            assert!((Vector::from_column_slice(&s.a).norm() - 1.0).abs() <= 1e-12);
        }
        assert!((o.v.norm() - 1.0).abs() <= 1e-12);
        if min_projected(&m, &o.v) <= eps {
            hits += 1;
        }
    }
    assert!(hits as f64 >= 0.8 * trials as f64, "{hits}/{trials}");
}

#[test]
fn check_outcome_two_sided() {
    let m = HyperplaneModel::new(vec![0.5, 0.5], vec![unit(5, 0), unit(5, 1)]).unwrap();
    let h = Hints::uniform(2);
    assert!(check_outcome_hyperplanes(&m, &unit(5, 1), &h, 0.05, 0.1, Stream::root(5)).unwrap());
    // Orthogonal to both normals: |Pi_i v| = 1 for each component.
    assert!(!check_outcome_hyperplanes(&m, &unit(5, 3), &h, 0.05, 0.1, Stream::root(6)).unwrap());
    assert!(check_outcome_hyperplanes(&m, &unit(4, 0), &h, 0.05, 0.1, Stream::root(6)).is_err());
}

#[test]
fn reduction_of_the_aligned_hyperplane() {
    let v = random_unit(5, Stream::root(7));
    let m = HyperplaneModel::new(vec![1.0], vec![v.clone()]).unwrap();
    let (b, r) = reduce_to_mlr(&m.draw(1000, Stream::root(8)), &v).unwrap();
    assert_eq!(b.d, 4);
    assert!(b.y.iter().all(|y| y.abs() <= 1e-12));
    assert!(reduced_regressor(&v, &r).unwrap().norm() <= 1e-12);
}

#[test]
fn reduction_rejects_bad_input() {
    let m = HyperplaneModel::new(vec![1.0], vec![unit(3, 0)]).unwrap();
    let b = m.draw(10, Stream::root(1));
    assert!(reduce_to_mlr(&b, &Vector::from_column_slice(&[1.0, 1.0, 0.0])).is_err());
    assert!(reduce_to_mlr(&b, &unit(4, 0)).is_err());
    assert!(reduced_regressor(&unit(3, 0), &Reflection::to_last_axis(&unit(3, 2)).unwrap()).is_none());
}

#[test]
fn boost_from_the_exact_direction() {
    let m = HyperplaneModel::new(vec![0.5, 0.5], vec![unit(5, 0), random_unit(5, Stream::root(9))]).unwrap();
    let v = m.directions[0].clone();
    let o = hyperplane_boost(&m, &v, 0.01, &Hints::uniform(2), &DescentConfig::default(), Stream::root(10)).unwrap();
    assert!((o.v.norm() - 1.0).abs() <= 1e-12);
    assert!(signed_error(&o.v, &v) <= 0.01);
}

#[test]
fn boost_single_hyperplane_from_warm_start() {
    let w = random_unit(6, Stream::root(11));
    let m = HyperplaneModel::new(vec![1.0], vec![w.clone()]).unwrap();
    let u = random_unit(6, Stream::root(12));
    let v0 = (&w + (&u - &w * w.dot(&u)).normalize() * 0.05).normalize();
    let o = hyperplane_boost(&m, &v0, 1e-3, &Hints::uniform(1), &DescentConfig::default(), Stream::root(13)).unwrap();
    assert!((o.v.norm() - 1.0).abs() <= 1e-12);
    assert!(o.v.dot(&v0) > 0.0);
    assert!(signed_error(&o.v, &w) <= 1e-3, "{}", signed_error(&o.v, &w));
}

#[test]
fn learn_single_hyperplane() {
    let w = random_unit(5, Stream::root(14));
    let m = HyperplaneModel::new(vec![1.0], vec![w.clone()]).unwrap();
    let o = learn_hyperplanes(&m, &Hints::uniform(1), 0.1, 0.05, &DescentConfig::default(), Stream::root(15)).unwrap();
    assert!(o.complete);
    assert!(signed_error(&o.estimates[0], &w) <= 0.05);
    assert_eq!(o.estimates[0], canonical_sign(&o.estimates[0]));
}

#[test]
fn learn_two_hyperplanes() {
    let eps = 0.05;
    let cfg = DescentConfig::default();
    let trials = 5;
    let mut ok = 0;
    for seed in 0..trials {
        let m = HyperplaneModel::random(2, 6, 1.0, Stream::root(1000 + seed)).unwrap();
        let o = learn_hyperplanes(&m, &Hints::uniform(2), 0.1, eps, &cfg, Stream::root(seed)).unwrap();
        if score_recovery(&o.estimates, Truth::Hyperplanes(&m), true).unwrap().max_error <= eps {
            ok += 1;
        }
    }
    assert!(ok >= 4, "{ok}/{trials}");
}

/// Peeling an exactly known `v_1` leaves only component 2, thinned where
/// `|<x, v_1>| <= tau`; `E[<x, v_1>^2]` over survivors matches the truncated
/// Gaussian second moment with a two-sided z-test.
#[test]
fn peeled_stream_matches_the_sub_mixture() {
    let d = 6;
    let v1 = random_unit(d, Stream::root(16));
    let v2 = random_unit(d, Stream::root(17));
    let m = HyperplaneModel::new(vec![0.5, 0.5], vec![v1.clone(), v2.clone()]).unwrap();
    let tau = 0.05 * 3.0 * (d as f64).ln();
    let peeled = PeeledVectors { inner: &m, peeled: vec![(v1.clone(), tau)] };
    let b = peeled.draw(300_000, Stream::root(30));
    let on2 = b.project(&v2);
    assert!(on2.iter().all(|p| p.abs() <= 1e-12));
    let s = projected_norm(&v2, &v1);
    let u = tau / s;
    let std = Normal::standard();
    let tail = 2.0 * (1.0 - std.cdf(u));
    let want = s * s * (tail + 2.0 * u * std.pdf(u)) / tail;
    let sq: Vec<f64> = b.project(&v1).iter().map(|p| p * p).collect();
    let mean = sq.iter().sum::<f64>() / sq.len() as f64;
    let var = sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (sq.len() - 1) as f64;
    let z = (mean - want) / (var / sq.len() as f64).sqrt();
    assert!(z.abs() < 2.576, "{mean} vs {want}, z = {z}");
}

#[test]
fn learning_is_deterministic() {
    let m = HyperplaneModel::random(2, 5, 1.0, Stream::root(19)).unwrap();
    let run = || learn_hyperplanes(&m, &Hints::uniform(2), 0.1, 0.05, &DescentConfig::default(), Stream::root(20)).unwrap();
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reflection_is_an_isometry_onto_the_last_axis(seed in 0u64..100_000, d in 2usize..9) {
        let w = random_unit(d, Stream::root(seed));
        let r = Reflection::to_last_axis(&w).unwrap();
        let e = r.apply_vec(&w);
        prop_assert!((e[d - 1] - 1.0).abs() <= 1e-12);
        let x = random_unit(d, Stream::root(seed + 1)) * 3.7;
        let rx = r.apply_vec(&x);
        prop_assert!((rx.norm() - x.norm()).abs() <= 1e-12);
        prop_assert!((r.apply_vec(&rx) - &x).norm() <= 1e-12);
    }

    #[test]
    fn reduction_identity(seed in 0u64..100_000, d in 2usize..8) {
        let v = random_unit(d, Stream::root(seed));
        let w = random_unit(d, Stream::root(seed + 7));
        prop_assume!(v.dot(&w).abs() > 0.05);
        let m = HyperplaneModel::new(vec![1.0], vec![v.clone()]).unwrap();
        let (b, r) = reduce_to_mlr(&m.draw(50, Stream::root(seed + 3)), &w).unwrap();
        let u = reduced_regressor(&v, &r).unwrap();
        let res = b.residuals(&u).unwrap();
        prop_assert!(res.iter().all(|x| x.abs() <= 1e-10 * (1.0 + u.norm())));
        prop_assert!(signed_error(&direction_from_regressor(&u, &r), &v) <= 1e-10);
    }

    #[test]
    fn canonical_sign_rule(seed in 0u64..100_000, d in 1usize..9) {
        let v = random_unit(d, Stream::root(seed));
        let c = canonical_sign(&v);
        let i = c.iamax();
        prop_assert!(c[i] > 0.0);
        prop_assert!(c == v || c == -&v);
        prop_assert_eq!(canonical_sign(&-&v), c);
    }
}
