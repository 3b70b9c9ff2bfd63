use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use fmd_core::DescentConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Mlr,
    Hyperplanes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Noiseless,
    Noisy,
    Hyperplanes,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Mlr => "mlr",
            Kind::Hyperplanes => "hyperplanes",
        }
    }
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Noiseless => "noiseless",
            Mode::Noisy => "noisy",
            Mode::Hyperplanes => "hyperplanes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub kind: Kind,
    pub k: usize,
    pub d: usize,
    pub separation: f64,
    pub noise: f64,
    pub norm_bound: f64,
    pub out: Option<PathBuf>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig { kind: Kind::Mlr, k: 2, d: 8, separation: 1.0, noise: 0.0, norm_bound: 1.0, out: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub model: Option<PathBuf>,
    pub n: usize,
    pub out: Option<PathBuf>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { model: None, n: 1000, out: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    pub mode: Mode,
    /// Ground truth; also the sample source when `data` is absent.
    pub model: Option<PathBuf>,
    /// Sample CSV, resampled with replacement.
    pub data: Option<PathBuf>,
    pub epsilon: f64,
    pub delta: f64,
    /// Structural hints; taken from the model when unset.
    pub k: Option<usize>,
    pub p_min: Option<f64>,
    pub separation: Option<f64>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub trace: Option<PathBuf>,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            mode: Mode::Noiseless,
            model: None,
            data: None,
            epsilon: 0.05,
            delta: 0.1,
            k: None,
            p_min: None,
            separation: None,
            out: None,
            report: None,
            trace: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinVarRunConfig {
    pub input: Option<PathBuf>,
    /// Header name or zero-based index; the first column when unset.
    pub column: Option<String>,
    pub p_min: f64,
    /// Defaults to twice the moment-based largest-scale estimate.
    pub sigma_upper: Option<f64>,
    /// Defaults to `sigma_upper / 1000`.
    pub sigma_lower: Option<f64>,
}

impl Default for MinVarRunConfig {
    fn default() -> Self {
        MinVarRunConfig { input: None, column: None, p_min: 0.5, sigma_upper: None, sigma_lower: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub kind: Kind,
    pub ks: Vec<usize>,
    pub ds: Vec<usize>,
    pub separations: Vec<f64>,
    pub noises: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub runs: usize,
    pub delta: f64,
    /// Write measured wall time; when false the column is 0 so reruns are
    /// byte-identical.
    pub timing: bool,
    pub out: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            kind: Kind::Mlr,
            ks: vec![2],
            ds: vec![4],
            separations: vec![1.0],
            noises: vec![0.0],
            epsilons: vec![0.05],
            runs: 5,
            delta: 0.1,
            timing: true,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LowerBoundConfig {
    pub k: usize,
    pub alpha: f64,
    pub starts: usize,
    pub out: Option<PathBuf>,
}

impl Default for LowerBoundConfig {
    fn default() -> Self {
        LowerBoundConfig { k: 2, alpha: 0.25, starts: fmd_core::lowerbound::DEFAULT_STARTS, out: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; the rayon default when unset.
    pub threads: Option<usize>,
    pub generate: GenerateConfig,
    pub sample: SampleConfig,
    pub learn: LearnConfig,
    pub minvar: MinVarRunConfig,
    pub bench: BenchConfig,
    pub lowerbound: LowerBoundConfig,
    pub descent: DescentConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.descent.validate()?;
        if self.threads == Some(0) {
            bail!("threads must be at least 1");
        }
        let g = &self.generate;
        if g.k == 0 || g.d == 0 {
            bail!("generate: k and d must be positive");
        }
        if !(g.separation >= 0.0 && g.noise >= 0.0 && g.norm_bound > 0.0) {
            bail!("generate: separation and noise must be nonnegative, norm_bound positive");
        }
        if g.kind == Kind::Hyperplanes && g.noise != 0.0 {
            bail!("generate: hyperplane models have no noise rate");
        }
        let l = &self.learn;
        unit_interval("learn.epsilon", l.epsilon)?;
        unit_interval("learn.delta", l.delta)?;
        let b = &self.bench;
        unit_interval("bench.delta", b.delta)?;
        for &e in &b.epsilons {
            unit_interval("bench.epsilons", e)?;
        }
        if b.runs == 0 {
            bail!("bench.runs must be at least 1");
        }
        if b.ks.iter().chain(&b.ds).any(|&v| v == 0) {
            bail!("bench: k and d must be positive");
        }
        if b.noises.iter().any(|&n| n < 0.0) || b.separations.iter().any(|&s| s < 0.0) {
            bail!("bench: noises and separations must be nonnegative");
        }
        if b.kind == Kind::Hyperplanes && b.noises.iter().any(|&n| n != 0.0) {
            bail!("bench: hyperplane sweeps take no noise");
        }
        if !(self.minvar.p_min > 0.0 && self.minvar.p_min <= 1.0) {
            bail!("minvar.p_min must lie in (0, 1]");
        }
        Ok(())
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        bail!("{name} must lie in (0, 1), got {v}")
    }
}
