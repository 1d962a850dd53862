//! Posterior summaries: area means with equi-tailed intervals, parameter
//! means and medians, outlier probabilities and convergence statistics.

use serde::{Deserialize, Serialize};

use super::chain::{is_gated, HbModel, PosteriorDraws, Predictand};
use crate::diagnostics::{chain_diagnostic, mean, quantile_sorted, variance, ChainDiagnostic};
use crate::error::{Result, SaeError};
use crate::model::SurveyDataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaSummary {
    pub area_id: u32,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub intervals: Vec<Interval>,
}

impl AreaSummary {
    pub fn interval(&self, level: f64) -> Option<&Interval> {
        self.intervals.iter().find(|i| (i.level - level).abs() < 1e-9)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    #[serde(flatten)]
    pub diagnostic: ChainDiagnostic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitOutlier {
    pub area_id: u32,
    pub unit_id: u32,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub model: HbModel,
    pub predictand: Predictand,
    pub draws: usize,
    pub areas: Vec<AreaSummary>,
    pub parameters: Vec<ParameterSummary>,
    /// `P(z_ij = 0 | data)` per unit; empty for the normal model.
    pub outlier_prob: Vec<UnitOutlier>,
}

impl PosteriorSummary {
    pub fn parameter(&self, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Largest split R̂ among β, the variances and `p_e`.
    pub fn max_rhat(&self) -> f64 {
        self.parameters
            .iter()
            .filter(|p| is_gated(&p.name))
            .map(|p| p.diagnostic.rhat)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn converged(&self, threshold: f64) -> bool {
        self.max_rhat() < threshold
    }

    pub fn means(&self) -> Vec<f64> {
        self.areas.iter().map(|a| a.mean).collect()
    }

    pub fn sds(&self) -> Vec<f64> {
        self.areas.iter().map(|a| a.sd).collect()
    }
}

fn check_levels(levels: &[f64]) -> Result<()> {
    match levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        Some(l) => Err(SaeError::invalid(format!("interval level {l} outside (0, 1)"))),
        None => Ok(()),
    }
}

/// Mean, SD, median and equi-tailed intervals of one set of draws.
pub fn summarize_values(area_id: u32, values: &[f64], levels: &[f64]) -> Result<AreaSummary> {
    if values.is_empty() {
        return Err(SaeError::invalid("no retained draws to summarize"));
    }
    check_levels(levels)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let intervals = levels
        .iter()
        .map(|&level| {
            let alpha = (1.0 - level) / 2.0;
            Interval {
                level,
                lower: quantile_sorted(&sorted, alpha),
                upper: quantile_sorted(&sorted, 1.0 - alpha),
            }
        })
        .collect();
    Ok(AreaSummary {
        area_id,
        mean: mean(values),
        sd: variance(values).sqrt(),
        median: quantile_sorted(&sorted, 0.5),
        intervals,
    })
}

pub fn summarize(draws: &PosteriorDraws, levels: &[f64]) -> Result<PosteriorSummary> {
    let total = draws.total_draws();
    if total == 0 {
        return Err(SaeError::invalid("no retained draws to summarize"));
    }
    check_levels(levels)?;

    let areas = draws
        .area_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let pooled: Vec<f64> = draws
                .chains
                .iter()
                .flat_map(|c| match (&draws.config.predictand, &c.ybar) {
                    (Predictand::Ybar, Some(yb)) => yb[i].iter(),
                    _ => c.theta[i].iter(),
                })
                .copied()
                .collect();
            summarize_values(id, &pooled, levels)
        })
        .collect::<Result<Vec<_>>>()?;

    let parameters = draws
        .parameter_names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let per_chain: Vec<Vec<f64>> = draws.chains.iter().map(|c| c.params[k].clone()).collect();
            let pooled = per_chain.concat();
            let mut sorted = pooled.clone();
            sorted.sort_by(f64::total_cmp);
            ParameterSummary {
                name: name.clone(),
                mean: mean(&pooled),
                median: quantile_sorted(&sorted, 0.5),
                sd: variance(&pooled).sqrt(),
                diagnostic: chain_diagnostic(&per_chain),
            }
        })
        .collect();

    let outlier_prob = match draws.model {
        HbModel::Dg => Vec::new(),
        HbModel::Nm => draws
            .units
            .iter()
            .enumerate()
            .map(|(j, &(area_id, unit_id))| {
                let count: u64 = draws.chains.iter().map(|c| u64::from(c.outlier_counts[j])).sum();
                UnitOutlier {
                    area_id,
                    unit_id,
                    probability: count as f64 / total as f64,
                }
            })
            .collect(),
    };

    Ok(PosteriorSummary {
        model: draws.model,
        predictand: draws.config.predictand,
        draws: total,
        areas,
        parameters,
        outlier_prob,
    })
}

/// `(y − xᵀβ̄ − v̄) / σ̄`, with posterior means and `σ̄` the square root of
/// the mean regular-component variance (`σ₁²`, or `σ_e²` for the normal
/// model).
pub fn standardized_residuals(data: &SurveyDataset, summary: &PosteriorSummary) -> Result<Vec<f64>> {
    let get = |name: &str| {
        summary
            .parameter(name)
            .map(|p| p.mean)
            .ok_or_else(|| SaeError::invalid(format!("summary lacks parameter {name}")))
    };
    let beta = (0..data.p())
        .map(|k| get(&format!("beta_{k}")))
        .collect::<Result<Vec<_>>>()?;
    let v = (1..=data.m())
        .map(|i| get(&format!("v_{i}")))
        .collect::<Result<Vec<_>>>()?;
    let scale = match summary.model {
        HbModel::Dg => get("sigma_e2")?,
        HbModel::Nm => get("sigma1_2")?,
    }
    .sqrt();
    Ok(super::conditionals::residuals(data, &beta, &v)
        .into_iter()
        .map(|r| r / scale)
        .collect())
}
