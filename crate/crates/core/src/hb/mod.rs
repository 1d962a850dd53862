//! Hierarchical Bayes prediction under the nested error regression model:
//! the normal-error Gibbs sampler, the normal-mixture sampler that
//! downweights outlying units, posterior summaries and trace output.

mod chain;
mod conditionals;
mod dg;
mod init;
mod nm;
mod summary;

pub use chain::{
    is_gated, run_chain, run_chain_with_prior, write_traces, ChainDraws, GibbsConfig, HbModel,
    HbPrior, PosteriorDraws, Predictand,
};
pub use conditionals::{
    coefficient_conditional, effect_conditional, effect_variance_conditional, residuals,
    CoefficientPrior, GaussianConditional, NormalConditional, VarianceConditional, VariancePrior,
};
pub use dg::{dg_gibbs_step, DgPrior, DgState};
pub use nm::{nm_gibbs_step, regular_probability, NmPrior, NmState};
pub use summary::{
    standardized_residuals, summarize, summarize_values, AreaSummary, Interval, ParameterSummary,
    PosteriorSummary, UnitOutlier,
};

/// Default convergence threshold on split R̂.
pub const RHAT_GATE: f64 = 1.05;
