//! Gibbs sampler for the normal nested error regression model with prior
//! `π(β, σ_v², σ_e²) ∝ 1/σ_e²`.

use serde::{Deserialize, Serialize};

use super::conditionals::{
    coefficient_conditional, effect_conditional, effect_variance_conditional, residuals,
    CoefficientPrior, GaussianConditional, NormalConditional, VarianceConditional, VariancePrior,
};
use super::init::StartingValues;
use crate::error::{Result, SaeError};
use crate::model::SurveyDataset;
use crate::samplers::{draw_normal, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgState {
    pub beta: Vec<f64>,
    pub v: Vec<f64>,
    pub sigma_v2: f64,
    pub sigma_e2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgPrior {
    pub beta: CoefficientPrior,
    pub sigma_v2: VariancePrior,
    pub sigma_e2: VariancePrior,
}

impl Default for DgPrior {
    fn default() -> Self {
        DgPrior {
            beta: CoefficientPrior::Flat,
            sigma_v2: VariancePrior::FLAT,
            sigma_e2: VariancePrior::RECIPROCAL,
        }
    }
}

impl DgState {
    pub fn validate(&self, data: &SurveyDataset) -> Result<()> {
        crate::error::check_dim("beta", data.p(), self.beta.len())?;
        crate::error::check_dim("random effects", data.m(), self.v.len())?;
        for (name, val) in [("sigma_v2", self.sigma_v2), ("sigma_e2", self.sigma_e2)] {
            if !(val > 0.0 && val.is_finite()) {
                return Err(SaeError::invalid(format!("{name} must be positive and finite, got {val}")));
            }
        }
        Ok(())
    }

    pub(crate) fn from_start(start: &StartingValues, jitter: [f64; 2]) -> Self {
        DgState {
            beta: start.beta.clone(),
            v: start.v.clone(),
            sigma_v2: start.sigma_v2 * jitter[0],
            sigma_e2: start.unit_variance * jitter[1],
        }
    }

    fn unit_precision(&self, n: usize) -> Vec<f64> {
        vec![1.0 / self.sigma_e2; n]
    }

    pub fn beta_conditional(&self, data: &SurveyDataset, prior: &DgPrior) -> Result<GaussianConditional> {
        coefficient_conditional(data, &self.v, &self.unit_precision(data.n()), &prior.beta)
    }

    pub fn effect_conditional(&self, data: &SurveyDataset, area: usize) -> NormalConditional {
        effect_conditional(data, &self.beta, &self.unit_precision(data.n()), self.sigma_v2, area)
    }

    pub fn sigma_v2_conditional(&self, prior: &DgPrior) -> VarianceConditional {
        effect_variance_conditional(&self.v, prior.sigma_v2)
    }

    pub fn sigma_e2_conditional(&self, data: &SurveyDataset, prior: &DgPrior) -> VarianceConditional {
        let ss: f64 = residuals(data, &self.beta, &self.v).iter().map(|r| r * r).sum();
        VarianceConditional::untruncated(
            prior.sigma_e2.shape + data.n() as f64 / 2.0,
            prior.sigma_e2.rate + ss / 2.0,
        )
    }
}

/// One systematic scan β → v → σ_v² → σ_e².
pub fn dg_gibbs_step(
    state: &mut DgState,
    data: &SurveyDataset,
    prior: &DgPrior,
    rng: &mut RngStream,
) -> Result<()> {
    state.beta = state.beta_conditional(data, prior)?.draw(rng)?;
    for i in 0..data.m() {
        let c = state.effect_conditional(data, i);
        state.v[i] = draw_normal(rng, c.mean, c.variance)?;
    }
    state.sigma_v2 = state.sigma_v2_conditional(prior).draw(rng)?;
    state.sigma_e2 = state.sigma_e2_conditional(data, prior).draw(rng)?;
    Ok(())
}
