//! Learning mixtures of linear regressions and mixtures of hyperplanes by
//! Fourier-moment descent.

pub mod boost;
pub mod config;
pub mod density;
pub mod descent;
pub mod error;
pub mod hyperplanes;
pub mod lowerbound;
pub mod minvar;
pub mod model;
pub mod par;
pub mod piecewise;
pub mod quad;
pub mod rng;
pub mod source;
pub mod subspace;

pub use config::{BoostConfig, DescentConfig, Hints, MinVarConfig};
pub use error::{FmdError, Result};
pub use model::{HyperplaneModel, LabeledSample, MlrModel, RecoveryReport, Vector, ZeroMeanGmm};
pub use piecewise::PiecewisePoly;
pub use rng::Stream;
