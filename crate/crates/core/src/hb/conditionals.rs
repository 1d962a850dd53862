//! Full-conditional distributions shared by both Gibbs samplers.
//!
//! Each sampler supplies a per-unit error precision `w_j` (`1/σ_e²` for the
//! normal model, `1/σ₁²` or `1/σ₂²` by indicator for the mixture); given
//! those, the conditionals of `β`, `v` and `σ_v²` have the same form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaeError};
use crate::model::SurveyDataset;
use crate::samplers::{draw_inverse_gamma, draw_trunc_inverse_gamma, RngStream};

/// Prior kernel `t^(−shape−1) exp(−rate/t)` for a variance parameter.
///
/// `(−1, 0)` is the flat prior, `(0, 0)` is `1/t`, and a positive shape and
/// rate give a proper inverse gamma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariancePrior {
    pub shape: f64,
    pub rate: f64,
}

impl VariancePrior {
    pub const FLAT: VariancePrior = VariancePrior {
        shape: -1.0,
        rate: 0.0,
    };
    pub const RECIPROCAL: VariancePrior = VariancePrior {
        shape: 0.0,
        rate: 0.0,
    };

    pub fn inverse_gamma(shape: f64, rate: f64) -> Self {
        VariancePrior { shape, rate }
    }

    pub fn is_proper(&self) -> bool {
        self.shape > 0.0 && self.rate > 0.0
    }

    pub fn log_kernel(&self, t: f64) -> f64 {
        -(self.shape + 1.0) * t.ln() - self.rate / t
    }
}

/// Prior on the regression coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CoefficientPrior {
    Flat,
    /// Independent normal components with common mean and variance.
    Normal { mean: Vec<f64>, variance: f64 },
}

/// A Gaussian full conditional in precision form.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianConditional {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
}

impl GaussianConditional {
    pub fn draw(&self, rng: &mut RngStream) -> Result<Vec<f64>> {
        let chol = self
            .precision
            .clone()
            .cholesky()
            .ok_or_else(|| SaeError::Singular("coefficient precision not positive definite".into()))?;
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.standard_normal());
        // Lᵀ δ = z gives δ ~ N(0, (L Lᵀ)⁻¹)
        let delta = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| SaeError::Singular("triangular solve failed".into()))?;
        Ok((&self.mean + delta).iter().copied().collect())
    }

    /// Log density up to the normalizing constant.
    pub fn log_kernel(&self, x: &[f64]) -> f64 {
        let d = DVector::from_column_slice(x) - &self.mean;
        -0.5 * (d.transpose() * &self.precision * &d)[(0, 0)]
    }
}

/// Univariate normal conditional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalConditional {
    pub mean: f64,
    pub variance: f64,
}

/// Inverse-gamma conditional, possibly truncated to `(lower, upper)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceConditional {
    pub shape: f64,
    pub rate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl VarianceConditional {
    pub fn untruncated(shape: f64, rate: f64) -> Self {
        VarianceConditional {
            shape,
            rate,
            lower: 0.0,
            upper: f64::INFINITY,
        }
    }

    pub fn draw(&self, rng: &mut RngStream) -> Result<f64> {
        if self.lower == 0.0 && self.upper.is_infinite() && self.shape > 0.0 && self.rate > 0.0 {
            draw_inverse_gamma(rng, self.shape, self.rate)
        } else {
            draw_trunc_inverse_gamma(rng, self.shape, self.rate, self.lower, self.upper)
        }
    }

    pub fn log_kernel(&self, t: f64) -> f64 {
        if t <= self.lower || t >= self.upper {
            return f64::NEG_INFINITY;
        }
        -(self.shape + 1.0) * t.ln() - self.rate / t
    }
}

/// `β | v, unit precisions` for a regression with offsets `v_area(j)`.
pub fn coefficient_conditional(
    data: &SurveyDataset,
    v: &[f64],
    unit_precision: &[f64],
    prior: &CoefficientPrior,
) -> Result<GaussianConditional> {
    let p = data.p();
    let x = data.design();
    let y = data.response();
    let mut prec = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for j in 0..data.n() {
        let w = unit_precision[j];
        let target = y[j] - v[data.area_of(j)];
        for a in 0..p {
            let xa = w * x[(j, a)];
            rhs[a] += xa * target;
            for b in 0..=a {
                prec[(a, b)] += xa * x[(j, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            prec[(b, a)] = prec[(a, b)];
        }
    }
    if let CoefficientPrior::Normal { mean, variance } = prior {
        for a in 0..p {
            prec[(a, a)] += 1.0 / variance;
            rhs[a] += mean[a] / variance;
        }
    }
    let chol = prec
        .clone()
        .cholesky()
        .ok_or_else(|| SaeError::Singular("collinear covariates: XᵀWX is not positive definite".into()))?;
    Ok(GaussianConditional {
        mean: chol.solve(&rhs),
        precision: prec,
    })
}

/// `v_i | β, σ_v², unit precisions`. An area with no sampled units gets its
/// prior `N(0, σ_v²)`.
pub fn effect_conditional(
    data: &SurveyDataset,
    beta: &[f64],
    unit_precision: &[f64],
    sigma_v2: f64,
    area: usize,
) -> NormalConditional {
    let x = data.design();
    let y = data.response();
    let mut prec = 1.0 / sigma_v2;
    let mut acc = 0.0;
    for &j in data.members(area) {
        let w = unit_precision[j];
        let fit: f64 = (0..data.p()).map(|k| x[(j, k)] * beta[k]).sum();
        prec += w;
        acc += w * (y[j] - fit);
    }
    NormalConditional {
        mean: acc / prec,
        variance: 1.0 / prec,
    }
}

/// `σ_v² | v`.
pub fn effect_variance_conditional(v: &[f64], prior: VariancePrior) -> VarianceConditional {
    let ss: f64 = v.iter().map(|x| x * x).sum();
    VarianceConditional::untruncated(prior.shape + v.len() as f64 / 2.0, prior.rate + ss / 2.0)
}

/// Full residuals `y − xᵀβ − v`.
pub fn residuals(data: &SurveyDataset, beta: &[f64], v: &[f64]) -> Vec<f64> {
    let x = data.design();
    let y = data.response();
    (0..data.n())
        .map(|j| {
            let fit: f64 = (0..data.p()).map(|k| x[(j, k)] * beta[k]).sum();
            y[j] - fit - v[data.area_of(j)]
        })
        .collect()
}

/// Checks that the σ_v² conditional is proper for this many areas.
pub(crate) fn check_effect_prior(m: usize, prior: VariancePrior) -> Result<()> {
    if prior.shape + m as f64 / 2.0 <= 0.0 {
        return Err(SaeError::validation(format!(
            "{m} areas are too few for a proper random-effect variance posterior (need m >= 3 under the flat prior)"
        )));
    }
    Ok(())
}
