//! Tunables for the estimators and learning loops.
//!
//! Every constant the algorithms leave unspecified lives here with a
//! calibrated default. All structs deserialize from partial JSON (missing
//! fields take defaults) and reject unknown keys.

use crate::error::{invalid, Result};
use serde::{Deserialize, Serialize};

/// How the smallest component scale of a residual sample is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinVarMethod {
    /// Gaussian-smoothed full-line Fourier moments, evaluated per sample.
    Smoothed,
    /// Piecewise-polynomial density estimate and closed-form truncated moments.
    Piecewise,
}

/// Which moment statistic the smoothed method inverts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentStatistic {
    /// Ratio of consecutive even moments; independent of mixing weights.
    Ratio,
    /// A single moment normalized as for one Gaussian component.
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinVarConfig {
    pub method: MinVarMethod,
    pub statistic: MomentStatistic,
    /// Smoothing bandwidth as a multiple of the current scale estimate.
    pub bandwidth_factor: f64,
    pub bandwidth_iterations: usize,
    /// Relative bandwidth change below which the fixed-point loop stops.
    pub bandwidth_tolerance: f64,
    /// `c` in the degree rule `p = c ln(3 / (2 p_min)) + 1`.
    pub degree_constant: f64,
    /// Largest degree any estimator or comparator will use.
    pub max_degree: usize,
    pub adaptive_start: usize,
    pub adaptive_cap: usize,
    /// Relative agreement of successive estimates that ends sample doubling.
    pub adaptive_agreement: f64,
    /// L2 target for the piecewise method's density estimate.
    pub density_eta: f64,
}

impl Default for MinVarConfig {
    fn default() -> Self {
        MinVarConfig {
            method: MinVarMethod::Smoothed,
            statistic: MomentStatistic::Ratio,
            bandwidth_factor: 3.0,
            bandwidth_iterations: 10,
            bandwidth_tolerance: 0.01,
            degree_constant: 20.0,
            max_degree: 48,
            adaptive_start: 25_000,
            adaptive_cap: 1_600_000,
            adaptive_agreement: 0.05,
            density_eta: 0.01,
        }
    }
}

/// Step-size rule for the boosting iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearningRate {
    /// `xi^6 / (2 d Delta^4)`.
    Conservative,
    /// `rate_constant * xi^2`.
    Scaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostConfig {
    pub max_iterations: usize,
    /// `c` in the batch rule `N = c d / xi^4`.
    pub batch_constant: f64,
    pub min_batch: usize,
    pub max_batch: usize,
    /// Samples used to re-estimate `xi` at each step.
    pub scale_batch: usize,
    /// `C` in the warm-start radius `Delta / (C p_min^{1/4})`.
    pub gamma_constant: f64,
    /// `C'` in the noise ceiling `C' (p_min eps Delta^4)^{1/5}`.
    pub noise_constant: f64,
    pub learning_rate: LearningRate,
    pub rate_constant: f64,
    /// Abort when the scale estimate grows by this factor over the start.
    pub divergence_factor: f64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            max_iterations: 4000,
            batch_constant: 400.0,
            min_batch: 4000,
            max_batch: 40_000,
            scale_batch: 20_000,
            gamma_constant: 1.0,
            noise_constant: 1.0,
            learning_rate: LearningRate::Scaled,
            rate_constant: 0.12,
            divergence_factor: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescentConfig {
    /// Outer iterations `T`.
    pub iterations: usize,
    /// Candidate directions per step `M`; `None` uses `e^{sqrt k} ln(2/delta)`.
    pub candidates: Option<usize>,
    pub max_candidates: usize,
    /// Multiplier on `k^{-1/4} sigma*` for the step length.
    pub step_constant: f64,
    /// `a_LR` for the gap-preserving variant.
    pub a_lr: f64,
    /// `kappa = kappa_constant / sqrt(k)`; the comparator uses `(kappa, 2 kappa)`.
    pub kappa_constant: f64,
    /// Gap constant `c` of the gap-preserving variant.
    pub gap_constant: f64,
    /// Upper scale bound; `None` estimates it from the data.
    pub sigma_upper: Option<f64>,
    /// `sigma_lower = epsilon * sigma_lower_factor`.
    pub sigma_lower_factor: f64,
    /// Target accuracy of the span estimate.
    pub svd_accuracy: f64,
    /// Samples for the moment matrix `N_1`.
    pub matrix_samples: usize,
    /// Keep only samples with residual below `matrix_trim * sigma*` in the
    /// moment matrix; `None` uses every sample.
    pub matrix_trim: Option<f64>,
    /// Samples per min-variance estimate inside the loop.
    pub batch_size: usize,
    /// Restarts `W`; `None` uses `exp(sqrt k / Delta^2) ln(2k/delta)`.
    pub restarts: Option<usize>,
    pub max_restarts: usize,
    /// Mesh ratio `upsilon*` for the initialization radii.
    pub mesh_upsilon: f64,
    pub a_noise: f64,
    pub a_scale: f64,
    pub stall_patience: usize,
    /// Peeling keeps samples with residual above `eps * peel_log_factor * ln d`.
    pub peel_log_factor: f64,
    /// Attempts per peeling round before the round is flagged as failed.
    pub round_retries: usize,
    pub minvar: MinVarConfig,
    pub boost: BoostConfig,
}

impl Default for DescentConfig {
    fn default() -> Self {
        DescentConfig {
            iterations: 300,
            candidates: None,
            max_candidates: 48,
            step_constant: 0.5,
            a_lr: 0.5,
            kappa_constant: 1.0 / 24.0,
            gap_constant: 0.1,
            sigma_upper: None,
            sigma_lower_factor: 1.0 / 3.0,
            svd_accuracy: 1e-2,
            matrix_samples: 40_000,
            matrix_trim: Some(3.0),
            batch_size: 60_000,
            restarts: None,
            max_restarts: 24,
            mesh_upsilon: 1.0,
            a_noise: 0.1,
            a_scale: 1.0,
            stall_patience: 3,
            peel_log_factor: 3.0,
            round_retries: 3,
            minvar: MinVarConfig::default(),
            boost: BoostConfig::default(),
        }
    }
}

/// Structural knowledge the learners assume: component count and lower
/// bounds on the smallest mixing weight and on the separation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hints {
    pub k: usize,
    pub p_min: f64,
    pub separation: f64,
}

impl Hints {
    /// Uniform weights and unit separation.
    pub fn uniform(k: usize) -> Self {
        Hints { k, p_min: 1.0 / k as f64, separation: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        if !(self.p_min > 0.0 && self.p_min <= 1.0 / self.k as f64 + 1e-12) {
            return Err(invalid("p_min must lie in (0, 1/k]"));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(invalid("separation must be positive"));
        }
        Ok(())
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite")))
    }
}

fn at_least_one(name: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be at least 1")))
    }
}

impl MinVarConfig {
    pub fn validate(&self) -> Result<()> {
        positive("bandwidth_factor", self.bandwidth_factor)?;
        positive("bandwidth_tolerance", self.bandwidth_tolerance)?;
        positive("degree_constant", self.degree_constant)?;
        positive("adaptive_agreement", self.adaptive_agreement)?;
        at_least_one("bandwidth_iterations", self.bandwidth_iterations)?;
        if self.max_degree < 2 {
            return Err(invalid("max_degree must be at least 2"));
        }
        if self.adaptive_start < 64 || self.adaptive_cap < self.adaptive_start {
            return Err(invalid("need 64 <= adaptive_start <= adaptive_cap"));
        }
        if !(self.density_eta > 0.0 && self.density_eta < 1.0) {
            return Err(invalid("density_eta must lie in (0, 1)"));
        }
        Ok(())
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        at_least_one("max_iterations", self.max_iterations)?;
        positive("batch_constant", self.batch_constant)?;
        positive("gamma_constant", self.gamma_constant)?;
        positive("noise_constant", self.noise_constant)?;
        positive("rate_constant", self.rate_constant)?;
        if self.divergence_factor <= 1.0 {
            return Err(invalid("divergence_factor must exceed 1"));
        }
        if self.min_batch < 16 || self.max_batch < self.min_batch || self.scale_batch < 64 {
            return Err(invalid("need 16 <= min_batch <= max_batch and scale_batch >= 64"));
        }
        Ok(())
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        at_least_one("iterations", self.iterations)?;
        at_least_one("max_candidates", self.max_candidates)?;
        at_least_one("max_restarts", self.max_restarts)?;
        at_least_one("stall_patience", self.stall_patience)?;
        at_least_one("round_retries", self.round_retries)?;
        if let Some(m) = self.candidates {
            at_least_one("candidates", m)?;
        }
        if let Some(w) = self.restarts {
            at_least_one("restarts", w)?;
        }
        if let Some(t) = self.matrix_trim {
            positive("matrix_trim", t)?;
        }
        if let Some(s) = self.sigma_upper {
            positive("sigma_upper", s)?;
        }
        for (name, v) in [
            ("step_constant", self.step_constant),
            ("a_lr", self.a_lr),
            ("kappa_constant", self.kappa_constant),
            ("gap_constant", self.gap_constant),
            ("sigma_lower_factor", self.sigma_lower_factor),
            ("svd_accuracy", self.svd_accuracy),
            ("mesh_upsilon", self.mesh_upsilon),
            ("a_noise", self.a_noise),
            ("a_scale", self.a_scale),
            ("peel_log_factor", self.peel_log_factor),
        ] {
            positive(name, v)?;
        }
        if self.matrix_samples < 64 || self.batch_size < 64 {
            return Err(invalid("matrix_samples and batch_size must be at least 64"));
        }
        self.minvar.validate()?;
        self.boost.validate()
    }

    /// `(kappa_1, kappa_2)` for a `k`-component problem.
    pub fn kappas(&self, k: usize) -> (f64, f64) {
        let kappa = self.kappa_constant / (k as f64).sqrt();
        (kappa, 2.0 * kappa)
    }

    /// Candidate directions per outer step.
    pub fn candidate_count(&self, k: usize, delta: f64) -> usize {
        let m = self.candidates.unwrap_or_else(|| {
            ((k as f64).sqrt().exp() * (2.0 / delta).ln()).ceil() as usize
        });
        m.clamp(1, self.max_candidates)
    }

    /// Random restarts for the noisy learner.
    pub fn restart_count(&self, hints: &Hints, delta: f64) -> usize {
        let w = self.restarts.unwrap_or_else(|| {
            let k = hints.k as f64;
            ((k.sqrt() / hints.separation.powi(2)).exp() * (2.0 * k / delta).ln()).ceil() as usize
        });
        w.clamp(1, self.max_restarts)
    }
}
