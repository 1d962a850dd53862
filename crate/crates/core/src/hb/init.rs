//! Starting values shared by both samplers.

use crate::error::Result;
use crate::linalg::ols;
use crate::model::SurveyDataset;
use crate::samplers::RngStream;

const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StartingValues {
    pub beta: Vec<f64>,
    pub v: Vec<f64>,
    pub sigma_v2: f64,
    /// Residual variance of the OLS fit.
    pub unit_variance: f64,
    /// `true` when the standardized OLS residual is below 2 in magnitude.
    pub regular: Vec<bool>,
}

impl StartingValues {
    pub fn from_data(data: &SurveyDataset) -> Result<Self> {
        let y = data.response();
        let beta = ols(data.design(), y.as_slice())?;
        let fitted = data.design() * nalgebra::DVector::from_column_slice(&beta);
        let r: Vec<f64> = (0..data.n()).map(|j| y[j] - fitted[j]).collect();
        let dof = (data.n() - data.p()).max(1) as f64;
        let unit_variance = (r.iter().map(|x| x * x).sum::<f64>() / dof).max(VARIANCE_FLOOR);

        let v: Vec<f64> = (0..data.m())
            .map(|i| {
                let members = data.members(i);
                if members.is_empty() {
                    0.0
                } else {
                    members.iter().map(|&j| r[j]).sum::<f64>() / members.len() as f64
                }
            })
            .collect();
        let sigma_v2 = crate::diagnostics::variance(&v).max(VARIANCE_FLOOR);
        let sd = unit_variance.sqrt();
        let regular = r.iter().map(|x| (x / sd).abs() < 2.0).collect();
        Ok(StartingValues {
            beta,
            v,
            sigma_v2,
            unit_variance,
            regular,
        })
    }
}

/// Multiplicative factors in [0.5, 1.5) for overdispersing chain starts.
pub(crate) fn jitter<const K: usize>(rng: &mut RngStream) -> [f64; K] {
    std::array::from_fn(|_| 0.5 + rng.uniform())
}
