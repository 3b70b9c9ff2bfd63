mod commands;
mod config;
mod io;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use commands::Status;
use config::{Kind, Mode, RunConfig};
use fmd_core::FmdError;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_FLAGGED: u8 = 3;

/// Learn mixtures of linear regressions and mixtures of hyperplanes.
///
/// Settings come from built-in defaults, then `--config`, then `FMD_SEED`,
/// then command-line flags.
#[derive(Parser, Debug)]
#[command(name = "fmd", version)]
struct Cli {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the merged configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a random model as JSON.
    Generate(GenerateArgs),
    /// Draw samples from a model file as CSV.
    Sample(SampleArgs),
    /// Learn the components of a model or a sample file.
    Learn(LearnArgs),
    /// Estimate the smallest component scale of one CSV column.
    Minvar(MinvarArgs),
    /// Sweep a parameter grid and write success rates as CSV.
    Bench(BenchArgs),
    /// Print a moment-matched pair of mixtures as CSV.
    Lowerbound(LowerboundArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    sep: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    norm_bound: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LearnArgs {
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    p_min: Option<f64>,
    #[arg(long)]
    sep: Option<f64>,
    /// Estimates JSON; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Recovery report CSV; needs `--model`.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Descent traces as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MinvarArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// Header name or zero-based index.
    #[arg(long)]
    column: Option<String>,
    #[arg(long)]
    p_min: Option<f64>,
    #[arg(long)]
    sigma_upper: Option<f64>,
    #[arg(long)]
    sigma_lower: Option<f64>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    ds: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    seps: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    noises: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    /// Write 0 in the wall-time column.
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LowerboundArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

impl Command {
    fn apply(self, c: &mut RunConfig) {
        match self {
            Command::Generate(a) => {
                let g = &mut c.generate;
                set(&mut g.kind, a.kind);
                set(&mut g.k, a.k);
                set(&mut g.d, a.d);
                set(&mut g.separation, a.sep);
                set(&mut g.noise, a.noise);
                set(&mut g.norm_bound, a.norm_bound);
                set_opt(&mut g.out, a.out);
            }
            Command::Sample(a) => {
                let s = &mut c.sample;
                set_opt(&mut s.model, a.model);
                set(&mut s.n, a.n);
                set_opt(&mut s.out, a.out);
            }
            Command::Learn(a) => {
                let l = &mut c.learn;
                set(&mut l.mode, a.mode);
                set_opt(&mut l.model, a.model);
                set_opt(&mut l.data, a.data);
                set(&mut l.epsilon, a.epsilon);
                set(&mut l.delta, a.delta);
                set_opt(&mut l.k, a.k);
                set_opt(&mut l.p_min, a.p_min);
                set_opt(&mut l.separation, a.sep);
                set_opt(&mut l.out, a.out);
                set_opt(&mut l.report, a.report);
                set_opt(&mut l.trace, a.trace);
            }
            Command::Minvar(a) => {
                let m = &mut c.minvar;
                set_opt(&mut m.input, a.input);
                set_opt(&mut m.column, a.column);
                set(&mut m.p_min, a.p_min);
                set_opt(&mut m.sigma_upper, a.sigma_upper);
                set_opt(&mut m.sigma_lower, a.sigma_lower);
            }
            Command::Bench(a) => {
                let b = &mut c.bench;
                set(&mut b.kind, a.kind);
                set(&mut b.ks, a.ks);
                set(&mut b.ds, a.ds);
                set(&mut b.separations, a.seps);
                set(&mut b.noises, a.noises);
                set(&mut b.epsilons, a.epsilons);
                set(&mut b.runs, a.runs);
                set(&mut b.delta, a.delta);
                if a.no_timing {
                    b.timing = false;
                }
                set_opt(&mut b.out, a.out);
            }
            Command::Lowerbound(a) => {
                let lb = &mut c.lowerbound;
                set(&mut lb.k, a.k);
                set(&mut lb.alpha, a.alpha);
                set(&mut lb.starts, a.starts);
                set_opt(&mut lb.out, a.out);
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Which {
    Generate,
    Sample,
    Learn,
    Minvar,
    Bench,
    Lowerbound,
}

fn merged(cli: Cli) -> Result<(RunConfig, Option<Which>, bool)> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Ok(s) = std::env::var("FMD_SEED") {
        cfg.seed = s.trim().parse().with_context(|| format!("FMD_SEED={s:?} is not an unsigned integer"))?;
    }
    set(&mut cfg.seed, cli.seed);
    set_opt(&mut cfg.threads, cli.threads);
    let which = cli.command.as_ref().map(|c| match c {
        Command::Generate(_) => Which::Generate,
        Command::Sample(_) => Which::Sample,
        Command::Learn(_) => Which::Learn,
        Command::Minvar(_) => Which::Minvar,
        Command::Bench(_) => Which::Bench,
        Command::Lowerbound(_) => Which::Lowerbound,
    });
    if let Some(c) = cli.command {
        c.apply(&mut cfg);
    }
    cfg.validate()?;
    Ok((cfg, which, cli.print_config))
}

fn dispatch(cfg: &RunConfig, which: Which) -> Result<Status> {
    match which {
        Which::Generate => commands::generate(cfg),
        Which::Sample => commands::sample(cfg),
        Which::Learn => commands::learn(cfg),
        Which::Minvar => commands::minvar(cfg),
        Which::Bench => commands::bench(cfg),
        Which::Lowerbound => commands::lowerbound(cfg),
    }
}

/// Library convergence failures are algorithm failures; everything else
/// traces back to the configuration or the inputs.
fn exit_code(e: &anyhow::Error) -> u8 {
    let failed = e.chain().any(|c| matches!(c.downcast_ref::<FmdError>(), Some(FmdError::NoConvergence(_))));
    if failed {
        EXIT_FLAGGED
    } else {
        EXIT_CONFIG
    }
}

fn run(cli: Cli) -> Result<Status> {
    let (cfg, which, print) = merged(cli)?;
    if print {
        let mut out = std::io::stdout().lock();
        serde_json::to_writer_pretty(&mut out, &cfg)?;
        writeln!(out)?;
        return Ok(Status::Done);
    }
    let which = which.context("no subcommand given; see --help")?;
    let go = || dispatch(&cfg, which);
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(go),
        None => go(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::Flagged) => {
            eprintln!("fmd: algorithm reported a failure; outputs were written");
            ExitCode::from(EXIT_FLAGGED)
        }
        Err(e) => {
            eprintln!("fmd: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
