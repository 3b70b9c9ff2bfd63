use crate::config::{Kind, Mode, RunConfig};
use crate::io::{read_column, read_model, read_samples, sink, write_mlr_samples, write_model, write_vec_samples, Samples};
use anyhow::{bail, Context, Result};
use fmd_core::descent::{learn_with_noise, learn_without_noise, LearnOutcome};
use fmd_core::hyperplanes::learn_hyperplanes;
use fmd_core::lowerbound::{moment_match_sigmas, moment_table};
use fmd_core::minvar::{estimate_max_variance, estimate_min_variance, minvar_degree};
use fmd_core::model::{score_recovery, AnyModel, RecoveryReport, Truth};
use fmd_core::source::{MlrDataset, MlrSource, VecDataset, VectorSource};
use fmd_core::{Hints, HyperplaneModel, MlrModel, Stream};
use serde::Serialize;
use std::io::Write;
use std::time::Instant;

/// Outcome of a subcommand that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Done,
    /// Outputs were written but the algorithm flagged a failure.
    Flagged,
}

const LABEL_MODEL: u64 = 1;
const LABEL_LEARN: u64 = 2;
/// Moments of the matched pair count as equal within this gap.
const MATCH_TOLERANCE: f64 = 1e-8;

pub fn generate(cfg: &RunConfig) -> Result<Status> {
    let g = &cfg.generate;
    let stream = Stream::root(cfg.seed);
    let model = match g.kind {
        Kind::Mlr => AnyModel::Mlr(MlrModel::random(g.k, g.d, g.separation, g.noise, g.norm_bound, stream)?),
        Kind::Hyperplanes => AnyModel::Hyperplanes(HyperplaneModel::random(g.k, g.d, g.separation, stream)?),
    };
    write_model(&model, g.out.as_deref())?;
    Ok(Status::Done)
}

pub fn sample(cfg: &RunConfig) -> Result<Status> {
    let s = &cfg.sample;
    let path = s.model.as_deref().context("sample needs --model")?;
    let stream = Stream::root(cfg.seed);
    match read_model(path)? {
        AnyModel::Mlr(m) => write_mlr_samples(&m.draw(s.n, stream), s.out.as_deref())?,
        AnyModel::Hyperplanes(h) => write_vec_samples(&h.draw(s.n, stream), s.out.as_deref())?,
    }
    Ok(Status::Done)
}

fn kind_name(m: &AnyModel) -> &'static str {
    match m {
        AnyModel::Mlr(_) => "an MLR model",
        AnyModel::Hyperplanes(_) => "a hyperplane model",
    }
}

/// Hints from explicit settings, falling back to the model's own values.
fn hints(cfg: &RunConfig, truth: Option<&AnyModel>) -> Result<Hints> {
    let l = &cfg.learn;
    let (k, p_min, sep) = match truth {
        Some(AnyModel::Mlr(m)) => (m.k(), m.p_min(), m.separation()),
        Some(AnyModel::Hyperplanes(h)) => (h.k(), h.p_min(), h.separation()),
        None => (l.k.context("learn needs --k when no model is given")?, f64::NAN, f64::NAN),
    };
    let k = l.k.unwrap_or(k);
    let p_min = l.p_min.unwrap_or(if p_min.is_finite() { p_min } else { 1.0 / k as f64 });
    let separation = l.separation.unwrap_or(if sep.is_finite() && sep > 0.0 { sep } else { 1.0 });
    let h = Hints { k, p_min, separation };
    h.validate()?;
    Ok(h)
}

#[derive(Serialize)]
struct EstimatesFile<'a> {
    mode: Mode,
    estimates: Vec<&'a [f64]>,
    complete: bool,
    notes: &'a [String],
    samples: u64,
}

fn write_report(r: &RecoveryReport, w: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["estimate", "truth", "error", "max_error", "samples_used"])?;
    for (i, (t, e)) in r.permutation.iter().zip(&r.errors).enumerate() {
        w.write_record([i.to_string(), t.to_string(), e.to_string(), r.max_error.to_string(), r.samples_used.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn run_learner(mode: Mode, src: Source<'_>, hints: &Hints, cfg: &RunConfig, stream: Stream) -> Result<LearnOutcome> {
    let (l, d) = (&cfg.learn, &cfg.descent);
    Ok(match (mode, src) {
        (Mode::Noiseless, Source::Mlr(s)) => learn_without_noise(s, hints, l.delta, l.epsilon, d, stream)?,
        (Mode::Noisy, Source::Mlr(s)) => learn_with_noise(s, hints, l.delta, l.epsilon, d, stream)?,
        (Mode::Hyperplanes, Source::Vectors(s)) => learn_hyperplanes(s, hints, l.delta, l.epsilon, d, stream)?,
        _ => unreachable!("input kind checked by the caller"),
    })
}

enum Source<'a> {
    Mlr(&'a dyn MlrSource),
    Vectors(&'a dyn VectorSource),
}

pub fn learn(cfg: &RunConfig) -> Result<Status> {
    let l = &cfg.learn;
    let truth = l.model.as_deref().map(read_model).transpose()?;
    let data = l.data.as_deref().map(read_samples).transpose()?;
    let wants_vectors = l.mode == Mode::Hyperplanes;
    if let Some(m) = &truth {
        if matches!(m, AnyModel::Hyperplanes(_)) != wants_vectors {
            bail!("input kind: mode {} cannot use {}", l.mode.name(), kind_name(m));
        }
    }
    if let Some(s) = &data {
        if matches!(s, Samples::Vectors(_)) != wants_vectors {
            let what = if wants_vectors { "MLR data (with a y column)" } else { "hyperplane data (no y column)" };
            bail!("input kind: mode {} cannot use {what}", l.mode.name());
        }
    }
    let hints = hints(cfg, truth.as_ref())?;
    let (mlr_data, vec_data) = match data {
        Some(Samples::Mlr(batch)) => (Some(MlrDataset { batch }), None),
        Some(Samples::Vectors(batch)) => (None, Some(VecDataset { batch })),
        None => (None, None),
    };
    let src = match (&mlr_data, &vec_data, &truth) {
        (Some(s), _, _) => Source::Mlr(s),
        (_, Some(s), _) => Source::Vectors(s),
        (_, _, Some(AnyModel::Mlr(m))) => Source::Mlr(m),
        (_, _, Some(AnyModel::Hyperplanes(h))) => Source::Vectors(h),
        _ => bail!("learn needs --model or --data"),
    };
    let dim = match src {
        Source::Mlr(s) => s.dim(),
        Source::Vectors(s) => s.dim(),
    };
    if let Some(m) = &truth {
        let d = match m {
            AnyModel::Mlr(m) => m.d(),
            AnyModel::Hyperplanes(h) => h.d(),
        };
        if d != dim {
            bail!("model dimension {d} does not match data dimension {dim}");
        }
    }

    let t = Instant::now();
    let outcome = run_learner(l.mode, src, &hints, cfg, Stream::root(cfg.seed).child(LABEL_LEARN))?;
    eprintln!("learned {} of {} components in {:.2}s", outcome.estimates.len(), hints.k, t.elapsed().as_secs_f64());
    let mut status = if outcome.complete { Status::Done } else { Status::Flagged };

    let file = EstimatesFile {
        mode: l.mode,
        estimates: outcome.estimates.iter().map(|v| v.as_slice()).collect(),
        complete: outcome.complete,
        notes: &outcome.notes,
        samples: outcome.samples,
    };
    let mut out = sink(l.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &file)?;
    writeln!(out)?;

    if let Some(path) = &l.trace {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
        for tr in &outcome.traces {
            tr.write_json_lines(&mut w)?;
        }
        w.flush()?;
    }

    if let Some(m) = &truth {
        let scored = match m {
            AnyModel::Mlr(m) => score_recovery(&outcome.estimates, Truth::Mlr(m), false),
            AnyModel::Hyperplanes(h) => score_recovery(&outcome.estimates, Truth::Hyperplanes(h), true),
        };
        match scored {
            Ok(mut r) => {
                r.samples_used = outcome.samples;
                eprintln!("max error {:.6}", r.max_error);
                if let Some(path) = &l.report {
                    write_report(&r, sink(Some(path))?)?;
                }
            }
            Err(e) => {
                eprintln!("no recovery report: {e}");
                status = Status::Flagged;
            }
        }
    } else if l.report.is_some() {
        bail!("--report needs --model as ground truth");
    }
    Ok(status)
}

pub fn minvar(cfg: &RunConfig) -> Result<Status> {
    let m = &cfg.minvar;
    let path = m.input.as_deref().context("minvar needs --input")?;
    let values = read_column(path, m.column.as_deref())?;
    if values.iter().all(|v| *v == values.first().copied().unwrap_or(0.0)) {
        bail!("degenerate input: the column has no spread");
    }
    let mv = &cfg.descent.minvar;
    let p = minvar_degree(m.p_min, mv.degree_constant).min(mv.max_degree);
    let upper = match m.sigma_upper {
        Some(u) => u,
        None => 2.0 * estimate_max_variance(&values, p)?,
    };
    let lower = m.sigma_lower.unwrap_or(upper / 1000.0);
    let e = estimate_min_variance(&values, upper, lower, p, mv)?;
    let mut out = sink(None)?;
    serde_json::to_writer_pretty(&mut out, &e)?;
    writeln!(out)?;
    Ok(if e.floored { Status::Flagged } else { Status::Done })
}

struct Cell {
    k: usize,
    d: usize,
    separation: f64,
    noise: f64,
    epsilon: f64,
}

pub fn bench(cfg: &RunConfig) -> Result<Status> {
    let b = &cfg.bench;
    let mut cells = Vec::new();
    for &k in &b.ks {
        for &d in &b.ds {
            for &separation in &b.separations {
                for &noise in &b.noises {
                    for &epsilon in &b.epsilons {
                        cells.push(Cell { k, d, separation, noise, epsilon });
                    }
                }
            }
        }
    }
    let mut w = csv::Writer::from_writer(sink(b.out.as_deref())?);
    w.write_record([
        "kind", "mode", "k", "d", "separation", "noise", "epsilon", "runs", "successes", "success_rate", "mean_max_error",
        "wall_secs", "samples_used",
    ])?;
    let root = Stream::root(cfg.seed);
    for (ci, c) in cells.iter().enumerate() {
        let mode = match (b.kind, c.noise > 0.0) {
            (Kind::Hyperplanes, _) => Mode::Hyperplanes,
            (Kind::Mlr, false) => Mode::Noiseless,
            (Kind::Mlr, true) => Mode::Noisy,
        };
        let tol = c.epsilon + 5.0 * c.noise;
        let (mut successes, mut err_sum, mut samples) = (0usize, 0.0, 0u64);
        let t = Instant::now();
        for run in 0..b.runs {
            let s = root.child2(ci as u64, run as u64);
            let hints = Hints { k: c.k, p_min: 1.0 / c.k as f64, separation: c.separation.max(1e-3) };
            let err = match b.kind {
                Kind::Mlr => {
                    let m = MlrModel::random(c.k, c.d, c.separation, c.noise, 1.0, s.child(LABEL_MODEL))?;
                    let o = run_learner(mode, Source::Mlr(&m), &hints, &bench_cfg(cfg, c), s.child(LABEL_LEARN))?;
                    samples += o.samples;
                    score_recovery(&o.estimates, Truth::Mlr(&m), false).map_or(f64::INFINITY, |r| r.max_error)
                }
                Kind::Hyperplanes => {
                    let h = HyperplaneModel::random(c.k, c.d, c.separation, s.child(LABEL_MODEL))?;
                    let o = run_learner(mode, Source::Vectors(&h), &hints, &bench_cfg(cfg, c), s.child(LABEL_LEARN))?;
                    samples += o.samples;
                    score_recovery(&o.estimates, Truth::Hyperplanes(&h), true).map_or(f64::INFINITY, |r| r.max_error)
                }
            };
            if err <= tol {
                successes += 1;
            }
            err_sum += err;
        }
        let wall = if b.timing { t.elapsed().as_secs_f64() } else { 0.0 };
        let runs = b.runs as f64;
        w.write_record([
            b.kind.name().to_string(),
            mode.name().to_string(),
            c.k.to_string(),
            c.d.to_string(),
            c.separation.to_string(),
            c.noise.to_string(),
            c.epsilon.to_string(),
            b.runs.to_string(),
            successes.to_string(),
            (successes as f64 / runs).to_string(),
            (err_sum / runs).to_string(),
            format!("{wall:.3}"),
            (samples / b.runs as u64).to_string(),
        ])?;
        w.flush()?;
    }
    Ok(Status::Done)
}

/// The run config with the learner's epsilon and delta set for one cell.
fn bench_cfg(cfg: &RunConfig, c: &Cell) -> RunConfig {
    let mut out = cfg.clone();
    out.learn.epsilon = c.epsilon;
    out.learn.delta = cfg.bench.delta;
    out
}

pub fn lowerbound(cfg: &RunConfig) -> Result<Status> {
    let lb = &cfg.lowerbound;
    let m = moment_match_sigmas(lb.k, lb.alpha, lb.starts, Stream::root(cfg.seed))?;
    let (g1, g2) = m.mixtures()?;
    let max_degree = 2 * lb.k;
    let (t1, t2) = (moment_table(&g1, max_degree), moment_table(&g2, max_degree));
    let mut w = csv::Writer::from_writer(sink(lb.out.as_deref())?);
    w.write_record(["table", "index", "first", "second", "abs_diff", "matched"])?;
    for (i, (a, b)) in m.sigmas.iter().zip(&m.sigmas_prime).enumerate() {
        w.write_record(["sigma".into(), (i + 1).to_string(), a.to_string(), b.to_string(), (a - b).abs().to_string(), String::new()])?;
    }
    for (i, (a, b)) in t1.iter().zip(&t2).enumerate() {
        let degree = i + 1;
        let matched = (a - b).abs() <= MATCH_TOLERANCE;
        w.write_record([
            "moment".into(),
            degree.to_string(),
            a.to_string(),
            b.to_string(),
            (a - b).abs().to_string(),
            matched.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(Status::Done)
}
