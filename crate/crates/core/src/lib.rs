//! Small area estimation of area means from unit-level survey data under the
//! nested error regression model, with four predictors:
//!
//! * [`hb`]: hierarchical Bayes under normal errors (Datta–Ghosh) and under
//!   a two-component normal scale mixture for the unit errors, both fitted
//!   by Gibbs sampling;
//! * [`reblup`]: the Sinha–Rao robust EBLUP with parametric bootstrap MSE;
//! * [`mquantile`]: the M-quantile estimator with a linearization MSE.
//!
//! [`evalsim`] runs the design-based simulation study comparing them.

pub mod diagnostics;
pub mod error;
pub mod evalsim;
pub mod fixtures;
pub mod hb;
pub mod linalg;
pub mod model;
pub mod mquantile;
pub mod reblup;
pub mod samplers;

pub use error::{Result, SaeError};
pub use model::{
    compose_area_mean, load_dataset, read_dataset, read_unsampled, residual, save_dataset, theta, AreaInfo,
    PredictandSet, SurveyDataset, UnitRecord, UnsampledCovariates,
};
pub use samplers::RngStream;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
