//! Acceptance report: one line per criterion. Pass criterion numbers as
//! arguments to run a subset. Criterion 8 checks a published constant that
//! is known to be wrong; it is expected to print FAIL, and the binary fails
//! only if some other criterion fails or 8 unexpectedly passes.

mod common;

use fmd_core::boost::{boost, cosine_bracket};
use fmd_core::descent::{learn_with_noise, learn_without_noise, LearnOutcome};
use fmd_core::hyperplanes::learn_hyperplanes;
use fmd_core::lowerbound::{moment_match_sigmas, DEFAULT_STARTS};
use fmd_core::minvar::{
    comparator_degree, compare_min_variances, estimate_min_variance_adaptive, minvar_degree, oracle_min_variance,
};
use fmd_core::model::{random_unit, score_recovery, MlrBatch, Truth};
use fmd_core::subspace::{mlr_moment_matrix, mlr_span};
use fmd_core::{
    BoostConfig, DescentConfig, Hints, HyperplaneModel, MinVarConfig, MlrModel, Stream, Vector, ZeroMeanGmm,
};
use nalgebra::DMatrix;
use rand::Rng;
use std::time::Instant;

const EXPECTED_FAIL: &[usize] = &[8];

type Check = fn() -> (bool, String);

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, Check); 11] = [
        (1, "fourier moment closed forms", c1_fourier_moments),
        (2, "min-variance bracket", c2_min_variance),
        (3, "comparator contract", c3_comparator),
        (4, "span estimation", c4_span),
        (5, "end-to-end noiseless", c5_noiseless),
        (6, "noisy pipeline", c6_noisy),
        (7, "boost contraction", c7_boost),
        (8, "cosine bracket constants", c8_bracket_constants),
        (9, "hyperplanes", c9_hyperplanes),
        (10, "moment matching", c10_moment_matching),
        (11, "determinism across thread counts", c11_determinism),
    ];
    let mut unexpected = Vec::new();
    for (id, name, check) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = check();
        let verdict = if pass { "PASS" } else { "FAIL" };
        let known = if !pass && EXPECTED_FAIL.contains(&id) { " (expected)" } else { "" };
        println!("criterion {id:>2} {verdict}{known} {name}: {detail} [{:.1}s]", t.elapsed().as_secs_f64());
        if pass == EXPECTED_FAIL.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        println!("unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}

fn rate(hits: usize, n: usize) -> String {
    format!("{hits}/{n} ({:.0}%)", 100.0 * hits as f64 / n as f64)
}

fn c1_fourier_moments() -> (bool, String) {
    let mut g = common::rng(2024);
    let n = 500;
    let mut ok = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let s = g.random_range(1..=20);
        let deg = g.random_range(0..=8);
        let tau = g.random_range(0.1..=50.0);
        let l = 2 * g.random_range(0..=15);
        let pp = common::random_pp(&mut g, s, deg, 1.0);
        let got = pp.fourier_moment(l, tau).unwrap();
        let want = common::fourier_moment_oracle(&pp, l, tau);
        let scale = 2.0 * tau.powi(l as i32 + 1) * pp.coeffs.iter().flatten().map(|c| c.abs()).sum::<f64>();
        if common::rel_close(got, want, 1e-8, 1e-12 * scale.max(1.0)) {
            ok += 1;
        }
        if want.abs() > 1e-300 {
            worst = worst.max(((got - want) / want).abs());
        }
    }
    (ok == n, format!("{} within 1e-8 rel / 1e-12 abs, worst rel {worst:.2e}", rate(ok, n)))
}

fn c2_min_variance() -> (bool, String) {
    let cfg = MinVarConfig::default();
    let mut g = common::rng(7);
    let trials = 200;
    let (mut sampled, mut exact) = (0, 0);
    for t in 0..trials {
        let p1 = g.random_range(0.25..0.75);
        let s_min = g.random_range(0.5..2.0);
        let ratio = g.random_range(3.0..10.0);
        let mix = ZeroMeanGmm::new(vec![p1, 1.0 - p1], vec![s_min, ratio * s_min]).unwrap();
        let p = minvar_degree(mix.p_min(), cfg.degree_constant);
        let (upper, lower) = (1.2 * ratio * s_min, 0.5 * s_min);
        let mut round = 0u64;
        let e = estimate_min_variance_adaptive(
            |n| {
                round += 1;
                Ok(mix.draw(n, Stream::root(t).child(round)))
            },
            upper,
            lower,
            p,
            &cfg,
        )
        .unwrap();
        if (0.9..=1.1).contains(&(e.sigma / s_min)) {
            sampled += 1;
        }
        let o = oracle_min_variance(&mix, upper, lower, p).unwrap();
        if (0.9..=1.1).contains(&(o / s_min)) {
            exact += 1;
        }
    }
    let pass = sampled as f64 >= 0.9 * trials as f64 && exact as f64 >= 0.99 * trials as f64;
    (pass, format!("sampled {} (need 90%), exact-density {} (need 99%)", rate(sampled, trials as usize), rate(exact, trials as usize)))
}

fn c3_comparator() -> (bool, String) {
    let cfg = MinVarConfig::default();
    let (k1, k2) = (0.1, 0.5);
    let p = comparator_degree(0.5, k1, k2);
    let mut g = common::rng(3);
    let trials = 100;
    let (mut true_ok, mut false_ok) = (0, 0);
    for t in 0..trials {
        let s = g.random_range(0.5..2.0);
        let base = ZeroMeanGmm::new(vec![0.5, 0.5], vec![s, 4.0 * s]).unwrap();
        let v2 = base.draw(100_000, Stream::root(t).child(1));
        let (upper, lower) = (6.0 * s, 0.4 * s);
        let hi = g.random_range(1.0 + k2..2.0);
        let wide = ZeroMeanGmm::new(vec![0.5, 0.5], vec![hi * s, 4.0 * s]).unwrap();
        let v1 = wide.draw(100_000, Stream::root(t).child(2));
        if compare_min_variances(&v1, &v2, upper, lower, k1, k2, p, &cfg).unwrap().verdict {
            true_ok += 1;
        }
        let lo = g.random_range(0.7..1.0 + k1);
        let near = ZeroMeanGmm::new(vec![0.5, 0.5], vec![lo * s, 4.0 * s]).unwrap();
        let v1 = near.draw(100_000, Stream::root(t).child(3));
        if !compare_min_variances(&v1, &v2, upper, lower, k1, k2, p, &cfg).unwrap().verdict {
            false_ok += 1;
        }
    }
    let pass = true_ok >= 95 && false_ok >= 95;
    (pass, format!("true side {}, false side {} (need 95% each)", rate(true_ok, trials as usize), rate(false_ok, trials as usize)))
}

fn c4_span() -> (bool, String) {
    let (k, d, n, trials) = (3, 16, 100_000, 50);
    let cfg = DescentConfig::default();
    let mut hits = 0;
    let mut worst: f64 = 1.0;
    for t in 0..trials {
        let m = MlrModel::random(k, d, 1.0, 0.0, 1.0, Stream::root(4000 + t)).unwrap();
        let a = Vector::zeros(d);
        let b = m.draw(n, Stream::root(t));
        let basis = mlr_span(&b, &a, k, cfg.svd_accuracy, 0.1, Stream::root(t).child(1)).unwrap();
        let ratios: Vec<f64> = m.regressors.iter().map(|w| (basis.u.transpose() * (w - &a)).norm() / (w - &a).norm()).collect();
        let lo = ratios.iter().cloned().fold(1.0, f64::min);
        worst = worst.min(lo);
        if lo >= 0.5 {
            hits += 1;
        }
    }
    // Exact expectation on a Gauss-Hermite design that integrates the
    // degree-4 moments of (x, noise) exactly.
    let d = 3;
    let regs = [[1.0, -0.5, 0.25], [-0.75, 0.5, 2.0]];
    let a = Vector::from_column_slice(&[0.5, 0.0, -0.25]);
    let mut b = MlrBatch { d, x: vec![], y: vec![] };
    for (w, mult) in regs.iter().zip([1, 3]) {
        for p in common::hermite_design(d + 1) {
            for _ in 0..mult {
                b.x.extend_from_slice(&p[..d]);
                b.y.push(w.iter().zip(&p).map(|(wi, xi)| wi * xi).sum::<f64>() + 0.5 * p[d]);
            }
        }
    }
    let got = mlr_moment_matrix(&b, &a).unwrap();
    let mut want = DMatrix::zeros(d, d);
    for (w, c) in regs.iter().zip([0.25, 0.75]) {
        let bi = Vector::from_column_slice(w) - &a;
        want += &bi * bi.transpose() * c;
    }
    let err = (&got - &want).abs().max();
    let pass = hits as f64 >= 0.95 * trials as f64 && err <= 1e-12;
    (pass, format!("{} trials with all ratios >= 0.5 (worst {worst:.3}); design expectation error {err:.1e}", rate(hits, trials as usize)))
}

fn mlr_runs(k: usize, d: usize, noise: f64, tol: f64, learn: fn(&MlrModel, &Hints, u64) -> LearnOutcome) -> (usize, f64) {
    let mut hits = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let m = MlrModel::random(k, d, 1.0, noise, 1.0, Stream::root(1000 + seed)).unwrap();
        let o = learn(&m, &Hints::uniform(k), seed);
        let err = score_recovery(&o.estimates, Truth::Mlr(&m), false).map_or(f64::INFINITY, |r| r.max_error);
        worst = worst.max(err);
        if err <= tol {
            hits += 1;
        }
    }
    (hits, worst)
}

fn c5_noiseless() -> (bool, String) {
    let (h2, w2) = mlr_runs(2, 8, 0.0, 0.01, |m, h, s| {
        learn_without_noise(m, h, 0.1, 0.01, &DescentConfig::default(), Stream::root(s)).unwrap()
    });
    let (h3, w3) = mlr_runs(3, 8, 0.0, 0.05, |m, h, s| {
        learn_without_noise(m, h, 0.1, 0.05, &DescentConfig::default(), Stream::root(s)).unwrap()
    });
    let pass = h2 >= 18 && h3 >= 15;
    (pass, format!("k=2 eps=0.01: {} (worst {w2:.4}); k=3 eps=0.05: {} (worst {w3:.4})", rate(h2, 20), rate(h3, 20)))
}

fn c6_noisy() -> (bool, String) {
    let (eps, noise) = (0.1, 0.02);
    let (hits, worst) = mlr_runs(2, 6, noise, eps + 5.0 * noise, |m, h, s| {
        learn_with_noise(m, h, 0.1, 0.1, &DescentConfig::default(), Stream::root(s)).unwrap()
    });
    (hits >= 16, format!("{} within eps + 5 noise = 0.2 (worst {worst:.4})", rate(hits, 20)))
}

fn c7_boost() -> (bool, String) {
    let d = 5;
    let (mut inside, mut total, mut worst) = (0, 0, 0.0f64);
    for seed in 0..5 {
        let w = random_unit(d, Stream::root(70 + seed)) * 0.8;
        let m = MlrModel::new(vec![1.0], vec![w.clone()], 0.0).unwrap();
        let v0 = &w + random_unit(d, Stream::root(80 + seed)) * 0.1;
        let o = boost(&m, &v0, 1e-3, &Hints::uniform(1), &BoostConfig::default(), &MinVarConfig::default(), Stream::root(seed))
            .unwrap();
        worst = worst.max((&o.v - &w).norm());
        let iterates: Vec<Vector> = o.steps.iter().map(|s| Vector::from_column_slice(&s.v)).chain([o.v.clone()]).collect();
        for (s, pair) in o.steps.iter().zip(iterates.windows(2)) {
            let ratio = (&pair[1] - &w).norm_squared() / (&pair[0] - &w).norm_squared();
            let lo = 1.0 - s.xi.powi(4) / (d as f64).sqrt() - 0.02;
            let hi = 1.0 - s.xi.powi(8) / (4.0 * d as f64) + 0.02;
            total += 1;
            if (lo..=hi).contains(&ratio) {
                inside += 1;
            }
        }
    }
    let pass = inside as f64 >= 0.95 * total as f64 && worst <= 1e-3;
    (pass, format!("{} steps inside the bracket; worst final error {worst:.2e}", rate(inside, total)))
}

fn c8_bracket_constants() -> (bool, String) {
    let mut values = Vec::new();
    let mut inside = 0;
    for i in 1..=10 {
        let r = i as f64 / 10.0;
        let v = cosine_bracket(1.0, r).unwrap() / r.powi(3);
        if (0.23..=0.26).contains(&v) {
            inside += 1;
        }
        values.push(format!("{v:.4}"));
    }
    (inside == 10, format!("{inside}/10 normalized values in [0.23, 0.26]; measured [{}]", values.join(", ")))
}

fn c9_hyperplanes() -> (bool, String) {
    let mut hits = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let m = HyperplaneModel::random(2, 6, 1.0, Stream::root(1000 + seed)).unwrap();
        let o = learn_hyperplanes(&m, &Hints::uniform(2), 0.1, 0.05, &DescentConfig::default(), Stream::root(seed)).unwrap();
        let err = score_recovery(&o.estimates, Truth::Hyperplanes(&m), true).map_or(f64::INFINITY, |r| r.max_error);
        worst = worst.max(err);
        if err <= 0.05 {
            hits += 1;
        }
    }
    (hits >= 16, format!("{} within 0.05 up to sign (worst {worst:.4})", rate(hits, 20)))
}

fn c10_moment_matching() -> (bool, String) {
    let df = |n: usize| (1..=n).rev().step_by(2).map(|v| v as f64).product::<f64>();
    let mut pass = true;
    let mut parts = Vec::new();
    for k in 2..=4 {
        let m = moment_match_sigmas(k, 0.25, DEFAULT_STARTS, Stream::root(k as u64)).unwrap();
        let mut worst: f64 = 0.0;
        for l in 1..k {
            let mom = |s: &[f64]| s.iter().map(|v| v.powi(2 * l as i32)).sum::<f64>() / k as f64 * df(2 * l - 1);
            worst = worst.max((mom(&m.sigmas) - mom(&m.sigmas_prime)).abs());
        }
        let sep = m.separation();
        pass &= worst <= 1e-8 && sep >= 0.1 / (k as f64).sqrt();
        parts.push(format!("k={k} moment gap {worst:.1e} separation {sep:.3}"));
    }
    let m = moment_match_sigmas(2, 0.25, DEFAULT_STARTS, Stream::root(2)).unwrap();
    let r5 = 5f64.sqrt();
    let zerr = (m.z[0] - 2.0 / r5).abs().max((m.z[1] + 1.0 / r5).abs());
    pass &= zerr <= 1e-9;
    parts.push(format!("k=2 closed-form error {zerr:.1e}"));
    (pass, parts.join("; "))
}

/// Serialized outputs of every pipeline at a fixed seed.
fn pipeline_fingerprint() -> Vec<String> {
    let cfg = DescentConfig::default();
    let mlr = MlrModel::random(2, 5, 1.0, 0.0, 1.0, Stream::root(11)).unwrap();
    let noisy = MlrModel::random(2, 4, 1.0, 0.02, 1.0, Stream::root(12)).unwrap();
    let hyp = HyperplaneModel::random(2, 4, 1.0, Stream::root(13)).unwrap();
    let h = Hints::uniform(2);
    let a = learn_without_noise(&mlr, &h, 0.1, 0.05, &cfg, Stream::root(1)).unwrap();
    let b = learn_with_noise(&noisy, &h, 0.1, 0.1, &cfg, Stream::root(2)).unwrap();
    let c = learn_hyperplanes(&hyp, &h, 0.1, 0.05, &cfg, Stream::root(3)).unwrap();
    let ra = score_recovery(&a.estimates, Truth::Mlr(&mlr), false).ok();
    let mm = moment_match_sigmas(3, 0.25, DEFAULT_STARTS, Stream::root(4)).unwrap();
    vec![
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap(),
        serde_json::to_string(&c).unwrap(),
        serde_json::to_string(&ra).unwrap(),
        serde_json::to_string(&mm).unwrap(),
    ]
}

fn c11_determinism() -> (bool, String) {
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(pipeline_fingerprint)
    };
    let one = run(1);
    let again = run(1);
    let many = run(4);
    let pass = one == again && one == many;
    let bytes: usize = one.iter().map(|s| s.len()).sum();
    (pass, format!("{} pipelines, {bytes} bytes of traces and reports; rerun equal {}, 1 vs 4 threads equal {}", one.len(), one == again, one == many))
}
