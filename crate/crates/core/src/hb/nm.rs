//! Gibbs sampler for the nested error model with a two-component normal
//! mixture on the unit errors,
//!
//! ```text
//! e_ij ~ p_e N(0, σ₁²) + (1 − p_e) N(0, σ₂²),   σ₁² < σ₂²
//! ```
//!
//! under the prior `π ∝ (σ₂²)⁻² I(0 < σ₁² < σ₂²)` with `p_e ~ U(0, 1)`.
//! Latent `z_ij = 1` marks the regular component.

use serde::{Deserialize, Serialize};

use super::conditionals::{
    coefficient_conditional, effect_conditional, effect_variance_conditional, residuals,
    CoefficientPrior, GaussianConditional, NormalConditional, VarianceConditional, VariancePrior,
};
use super::init::StartingValues;
use crate::error::{Result, SaeError};
use crate::model::SurveyDataset;
use crate::samplers::{draw_bernoulli, draw_beta, draw_normal, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmState {
    pub beta: Vec<f64>,
    pub v: Vec<f64>,
    pub sigma_v2: f64,
    pub sigma1_2: f64,
    pub sigma2_2: f64,
    pub p_e: f64,
    pub z: Vec<bool>,
}

/// Priors for the mixture model. The variance kernels multiply the ordering
/// indicator `I(σ₁² < σ₂²)`; `p_e` is always uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmPrior {
    pub beta: CoefficientPrior,
    pub sigma_v2: VariancePrior,
    pub sigma1_2: VariancePrior,
    pub sigma2_2: VariancePrior,
}

impl Default for NmPrior {
    fn default() -> Self {
        NmPrior {
            beta: CoefficientPrior::Flat,
            sigma_v2: VariancePrior::FLAT,
            sigma1_2: VariancePrior::FLAT,
            sigma2_2: VariancePrior::inverse_gamma(1.0, 0.0),
        }
    }
}

/// `P(z = 1 | r)` for one residual, computed on the log scale.
pub fn regular_probability(r: f64, sigma1_2: f64, sigma2_2: f64, p_e: f64) -> f64 {
    let l1 = p_e.ln() - 0.5 * sigma1_2.ln() - r * r / (2.0 * sigma1_2);
    let l2 = (1.0 - p_e).ln() - 0.5 * sigma2_2.ln() - r * r / (2.0 * sigma2_2);
    1.0 / (1.0 + (l2 - l1).exp())
}

impl NmState {
    pub fn validate(&self, data: &SurveyDataset) -> Result<()> {
        crate::error::check_dim("beta", data.p(), self.beta.len())?;
        crate::error::check_dim("random effects", data.m(), self.v.len())?;
        crate::error::check_dim("indicators", data.n(), self.z.len())?;
        if !(self.sigma_v2 > 0.0 && self.sigma_v2.is_finite()) {
            return Err(SaeError::invalid(format!("sigma_v2 must be positive, got {}", self.sigma_v2)));
        }
        if !(self.sigma1_2 > 0.0 && self.sigma1_2 < self.sigma2_2 && self.sigma2_2.is_finite()) {
            return Err(SaeError::invalid(format!(
                "need 0 < sigma1_2 < sigma2_2 < inf, got {} and {}",
                self.sigma1_2, self.sigma2_2
            )));
        }
        if !(self.p_e > 0.0 && self.p_e < 1.0) {
            return Err(SaeError::invalid(format!("p_e must lie in (0, 1), got {}", self.p_e)));
        }
        Ok(())
    }

    pub(crate) fn from_start(start: &StartingValues, jitter: [f64; 2]) -> Self {
        let sigma2_2 = start.unit_variance * jitter[0];
        NmState {
            beta: start.beta.clone(),
            v: start.v.clone(),
            sigma_v2: start.sigma_v2 * jitter[1],
            sigma1_2: sigma2_2 / 2.0,
            sigma2_2,
            p_e: 0.5,
            z: start.regular.clone(),
        }
    }

    pub fn unit_precision(&self) -> Vec<f64> {
        self.z
            .iter()
            .map(|&z| if z { 1.0 / self.sigma1_2 } else { 1.0 / self.sigma2_2 })
            .collect()
    }

    /// Number of units in the regular component.
    pub fn regular_count(&self) -> usize {
        self.z.iter().filter(|&&z| z).count()
    }

    pub fn regular_probabilities(&self, data: &SurveyDataset) -> Vec<f64> {
        residuals(data, &self.beta, &self.v)
            .into_iter()
            .map(|r| regular_probability(r, self.sigma1_2, self.sigma2_2, self.p_e))
            .collect()
    }

    /// `(a, b)` of the Beta conditional of `p_e`.
    pub fn p_e_conditional(&self) -> (f64, f64) {
        let n1 = self.regular_count() as f64;
        (1.0 + n1, 1.0 + self.z.len() as f64 - n1)
    }

    pub fn beta_conditional(&self, data: &SurveyDataset, prior: &NmPrior) -> Result<GaussianConditional> {
        coefficient_conditional(data, &self.v, &self.unit_precision(), &prior.beta)
    }

    pub fn effect_conditional(&self, data: &SurveyDataset, area: usize) -> NormalConditional {
        effect_conditional(data, &self.beta, &self.unit_precision(), self.sigma_v2, area)
    }

    pub fn sigma_v2_conditional(&self, prior: &NmPrior) -> VarianceConditional {
        effect_variance_conditional(&self.v, prior.sigma_v2)
    }

    fn component_sums(&self, data: &SurveyDataset) -> [(f64, f64); 2] {
        let mut sums = [(0.0, 0.0); 2];
        for (r, &z) in residuals(data, &self.beta, &self.v).iter().zip(&self.z) {
            let s = &mut sums[usize::from(!z)];
            s.0 += 1.0;
            s.1 += r * r;
        }
        sums
    }

    pub fn sigma1_2_conditional(&self, data: &SurveyDataset, prior: &NmPrior) -> VarianceConditional {
        let (n1, s1) = self.component_sums(data)[0];
        VarianceConditional {
            shape: prior.sigma1_2.shape + n1 / 2.0,
            rate: prior.sigma1_2.rate + s1 / 2.0,
            lower: 0.0,
            upper: self.sigma2_2,
        }
    }

    pub fn sigma2_2_conditional(&self, data: &SurveyDataset, prior: &NmPrior) -> VarianceConditional {
        let (n2, s2) = self.component_sums(data)[1];
        VarianceConditional {
            shape: prior.sigma2_2.shape + n2 / 2.0,
            rate: prior.sigma2_2.rate + s2 / 2.0,
            lower: self.sigma1_2,
            upper: f64::INFINITY,
        }
    }
}

/// One systematic scan z → p_e → β → v → σ_v² → σ₁² → σ₂².
pub fn nm_gibbs_step(
    state: &mut NmState,
    data: &SurveyDataset,
    prior: &NmPrior,
    rng: &mut RngStream,
) -> Result<()> {
    for (j, prob) in state.regular_probabilities(data).into_iter().enumerate() {
        state.z[j] = draw_bernoulli(rng, prob)?;
    }
    let (a, b) = state.p_e_conditional();
    // keep p_e strictly inside (0, 1) so the log weights stay finite
    state.p_e = draw_beta(rng, a, b)?.clamp(1e-12, 1.0 - 1e-12);
    state.beta = state.beta_conditional(data, prior)?.draw(rng)?;
    for i in 0..data.m() {
        let c = state.effect_conditional(data, i);
        state.v[i] = draw_normal(rng, c.mean, c.variance)?;
    }
    state.sigma_v2 = state.sigma_v2_conditional(prior).draw(rng)?;
    state.sigma1_2 = state.sigma1_2_conditional(data, prior).draw(rng)?;
    state.sigma2_2 = state.sigma2_2_conditional(data, prior).draw(rng)?;
    Ok(())
}
