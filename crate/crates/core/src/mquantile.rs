//! M-quantile small area estimation.
//!
//! For each `q` the coefficients `β_q` solve `Σ_j ψ_q(r_j) x_j = 0` with
//!
//! ```text
//! ψ_q(r) = ψ(r/s) {(1 − q) I(r ≤ 0) + q I(r > 0)}
//! ```
//!
//! and Huber's ψ. Each sampled unit gets the `q_ij` at which its fitted
//! value path crosses `y_ij`; the area estimate uses the mean `q̄_i` and
//!
//! ```text
//! Ŷ_i = N_i⁻¹ [Σ_s y + t_rᵀβ_q̄ + (N_i − n_i)(ȳ_i − x̄_iᵀβ_q̄)]
//! ```
//!
//! with `t_r = N_i X̄_i − n_i x̄_i` the covariate total of the unsampled units.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaeError};
use crate::linalg::{ols, weighted_least_squares};
use crate::model::SurveyDataset;
use crate::reblup::HuberPsi;

const SCALE_FLOOR: f64 = 1e-8;
const MAD_CONSISTENCY: f64 = 0.6745;

/// Area mean predictor built from `β_q̄`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MqEstimator {
    /// Includes the `(N_i − n_i)(ȳ_i − x̄_iᵀβ_q̄)` correction.
    #[default]
    BiasAdjusted,
    /// `N_i⁻¹ [Σ_s y + t_rᵀβ_q̄]` only.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MqOptions {
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default)]
    pub estimator: MqEstimator,
}

impl Default for MqOptions {
    fn default() -> Self {
        MqOptions {
            tol: 1e-8,
            max_iter: 200,
            estimator: MqEstimator::BiasAdjusted,
        }
    }
}

/// One M-quantile regression fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MqFit {
    pub q: f64,
    pub beta: Vec<f64>,
    pub scale: f64,
    /// Final IRLS weights `ψ_q(r_j)/(r_j/s)`.
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// `ψ_q(u)` for a standardized residual `u = r/s`.
pub fn psi_q(u: f64, q: f64, psi: HuberPsi) -> f64 {
    let side = if u > 0.0 { q } else { 1.0 - q };
    psi.psi(u) * side
}

fn irls_weight(u: f64, q: f64, psi: HuberPsi) -> f64 {
    let side = if u > 0.0 { q } else { 1.0 - q };
    psi.weight(u) * side
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// `median(|r − median(r)|) / 0.6745`, floored.
pub fn mad_scale(residuals: &[f64]) -> f64 {
    let center = median(residuals.to_vec());
    let med = median(residuals.iter().map(|r| (r - center).abs()).collect());
    (med / MAD_CONSISTENCY).max(SCALE_FLOOR)
}

pub fn fit_mq(data: &SurveyDataset, q: f64, psi: HuberPsi, options: MqOptions) -> Result<MqFit> {
    if !(q > 0.0 && q < 1.0) {
        return Err(SaeError::invalid(format!("quantile {q} outside (0, 1)")));
    }
    data.require_dof()?;
    let x = data.design();
    let y = data.response();
    let mut beta = DVector::from_vec(ols(x, y.as_slice())?);
    let mut weights = vec![1.0; data.n()];
    let mut scale = 1.0;
    for it in 1..=options.max_iter {
        let r = y - x * &beta;
        scale = mad_scale(r.as_slice());
        weights = r.iter().map(|rj| irls_weight(rj / scale, q, psi)).collect();
        let (next, _) = weighted_least_squares(x, &weights, y.as_slice())?;
        let size = beta.amax().max(1e-12);
        let change = (&next - &beta).amax() / size;
        beta = next;
        if change < options.tol {
            return Ok(MqFit {
                q,
                beta: beta.iter().copied().collect(),
                scale,
                weights,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(MqFit {
        q,
        beta: beta.iter().copied().collect(),
        scale,
        weights,
        iterations: options.max_iter,
        converged: false,
    })
}

/// Coefficients on a grid of quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MqGridFit {
    pub q_grid: Vec<f64>,
    pub beta_q: Vec<Vec<f64>>,
    pub scale_s: Vec<f64>,
    pub c: f64,
}

/// `{0.02, 0.04, …, 0.98}`.
pub fn default_grid() -> Vec<f64> {
    (1..=49).map(|k| k as f64 * 0.02).collect()
}

pub fn fit_grid(data: &SurveyDataset, grid: &[f64], psi: HuberPsi, options: MqOptions) -> Result<MqGridFit> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(SaeError::invalid("quantile grid must be non-empty and strictly increasing"));
    }
    let fits = grid
        .par_iter()
        .map(|&q| fit_mq(data, q, psi, options))
        .collect::<Result<Vec<_>>>()?;
    if let Some(f) = fits.iter().find(|f| f.beta.iter().any(|b| !b.is_finite())) {
        return Err(SaeError::NonConvergence(format!("non-finite coefficients at q = {}", f.q)));
    }
    Ok(MqGridFit {
        q_grid: grid.to_vec(),
        scale_s: fits.iter().map(|f| f.scale).collect(),
        beta_q: fits.into_iter().map(|f| f.beta).collect(),
        c: psi.c,
    })
}

/// The `q` at which `xᵀβ_q` crosses `y`, interpolated linearly between grid
/// points and clamped to the grid range.
pub fn unit_quantile(y: f64, x: &[f64], grid: &MqGridFit) -> f64 {
    let fitted: Vec<f64> = grid
        .beta_q
        .iter()
        .map(|b| b.iter().zip(x).map(|(a, c)| a * c).sum())
        .collect();
    let (first, last) = (grid.q_grid[0], grid.q_grid[grid.q_grid.len() - 1]);
    if y <= fitted[0] {
        return first;
    }
    for k in 0..fitted.len() - 1 {
        let (lo, hi) = (fitted[k], fitted[k + 1]);
        if y >= lo.min(hi) && y <= lo.max(hi) {
            if hi == lo {
                return grid.q_grid[k];
            }
            let t = (y - lo) / (hi - lo);
            return grid.q_grid[k] + t * (grid.q_grid[k + 1] - grid.q_grid[k]);
        }
    }
    if y >= fitted[fitted.len() - 1] {
        last
    } else {
        first
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MqAreaFit {
    pub unit_q: Vec<f64>,
    /// `q̄_i`, or 0.5 for an area without sampled units.
    pub area_qbar: Vec<f64>,
    /// Coefficients refitted at each `q̄_i`.
    pub area_beta: Vec<Vec<f64>>,
    pub estimates: Vec<f64>,
    pub mse: Vec<f64>,
    #[serde(skip)]
    area_fits: Vec<MqFit>,
}

impl MqAreaFit {
    /// Refit at `q̄_i` used for area `i`.
    pub fn area_fit(&self, i: usize) -> &MqFit {
        &self.area_fits[i]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Area mean prediction given `β_q̄`. Areas without sampled units fall back
/// to the synthetic `X̄_iᵀβ`.
pub fn area_estimate(data: &SurveyDataset, i: usize, beta: &[f64], estimator: MqEstimator) -> f64 {
    let area = &data.areas()[i];
    let members = data.members(i);
    let y = data.response();
    let n = members.len() as f64;
    if members.is_empty() {
        return dot(&area.xbar, beta);
    }
    let big_n = area.population as f64;
    let ybar = members.iter().map(|&j| y[j]).sum::<f64>() / n;
    if area.population == members.len() {
        return ybar;
    }
    let xbar_s = data.sample_xbar(i);
    let t_r: Vec<f64> = area
        .xbar
        .iter()
        .zip(&xbar_s)
        .map(|(xp, xs)| big_n * xp - n * xs)
        .collect();
    let correction = match estimator {
        MqEstimator::BiasAdjusted => (big_n - n) * (ybar - dot(&xbar_s, beta)),
        MqEstimator::Plain => 0.0,
    };
    (n * ybar + dot(&t_r, beta) + correction) / big_n
}

/// Coefficients `a_ij` with `Ŷ_i = Σ_j a_ij y_j` when `β_q̄` is written as
/// the weighted least-squares solution at its final IRLS weights.
pub fn linear_weights(data: &SurveyDataset, i: usize, fit: &MqFit, estimator: MqEstimator) -> Result<Vec<f64>> {
    let area = &data.areas()[i];
    let members = data.members(i);
    let x = data.design();
    let (_, chol) = weighted_least_squares(x, &fit.weights, data.response().as_slice())?;
    let n = members.len() as f64;
    let big_n = area.population as f64;
    let census = area.population == members.len();
    // Ŷ = own·Σ_i y + gᵀβ with β = (XᵀWX)⁻¹XᵀW y
    let (own, g): (f64, Vec<f64>) = if members.is_empty() {
        (0.0, area.xbar.clone())
    } else if census {
        (1.0 / n, vec![0.0; data.p()])
    } else {
        let xbar_s = data.sample_xbar(i);
        let kept = match estimator {
            MqEstimator::BiasAdjusted => big_n - n,
            MqEstimator::Plain => 0.0,
        };
        let g = area
            .xbar
            .iter()
            .zip(&xbar_s)
            .map(|(xp, xs)| (big_n * xp - n * xs - kept * xs) / big_n)
            .collect();
        ((n + kept) / (n * big_n), g)
    };
    let h = chol.solve(&DVector::from_vec(g));
    let mut a: Vec<f64> = (0..data.n())
        .map(|j| fit.weights[j] * (0..data.p()).map(|k| x[(j, k)] * h[k]).sum::<f64>())
        .collect();
    for &j in members {
        a[j] += own;
    }
    Ok(a)
}

/// Linearization MSE of `Σ_j a_j y_j` as a predictor of the area mean:
///
/// ```text
/// Σ_j r_j² [(a_j − 1(j∈i)/N_i)² + (N_i − n_i)/(N_i² (n − p))] + bias²
/// ```
///
/// with `r_j` the residuals from `μ̂_j` and `bias = Σ_j a_j μ̂_j − target`.
pub fn linearized_mse(
    data: &SurveyDataset,
    i: usize,
    a: &[f64],
    mu: &[f64],
    target: f64,
) -> f64 {
    let area = &data.areas()[i];
    let y = data.response();
    let big_n = area.population as f64;
    let unsampled = (area.population - data.members(i).len()) as f64;
    let dof = (data.n() - data.p()).max(1) as f64;
    let mut var = 0.0;
    let mut fitted = 0.0;
    for j in 0..data.n() {
        let own = if data.area_of(j) == i { 1.0 / big_n } else { 0.0 };
        let r2 = (y[j] - mu[j]).powi(2);
        var += r2 * ((a[j] - own).powi(2) + unsampled / (big_n * big_n * dof));
        fitted += a[j] * mu[j];
    }
    var + (fitted - target).powi(2)
}

pub fn mq_area_estimate(
    data: &SurveyDataset,
    grid: &MqGridFit,
    psi: HuberPsi,
    options: MqOptions,
) -> Result<MqAreaFit> {
    let unit_q: Vec<f64> = data
        .records()
        .iter()
        .map(|r| unit_quantile(r.y, &r.x, grid))
        .collect();
    let area_qbar: Vec<f64> = (0..data.m())
        .map(|i| {
            let m = data.members(i);
            if m.is_empty() {
                0.5
            } else {
                m.iter().map(|&j| unit_q[j]).sum::<f64>() / m.len() as f64
            }
        })
        .collect();
    let area_fits = area_qbar
        .par_iter()
        .map(|&q| fit_mq(data, q, psi, options))
        .collect::<Result<Vec<_>>>()?;
    if let Some((i, _)) = area_fits.iter().enumerate().find(|(_, f)| !f.converged) {
        return Err(SaeError::NonConvergence(format!(
            "M-quantile fit at q = {} for area {} did not converge",
            area_qbar[i],
            data.areas()[i].area_id
        )));
    }
    let estimates: Vec<f64> = (0..data.m())
        .map(|i| area_estimate(data, i, &area_fits[i].beta, options.estimator))
        .collect();
    let x = data.design();
    let mu: Vec<f64> = (0..data.n())
        .map(|j| {
            let b = &area_fits[data.area_of(j)].beta;
            (0..data.p()).map(|k| x[(j, k)] * b[k]).sum()
        })
        .collect();
    let mse = (0..data.m())
        .map(|i| {
            let a = linear_weights(data, i, &area_fits[i], options.estimator)?;
            let target = dot(&data.areas()[i].xbar, &area_fits[i].beta);
            Ok(linearized_mse(data, i, &a, &mu, target))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MqAreaFit {
        unit_q,
        area_qbar,
        area_beta: area_fits.iter().map(|f| f.beta.clone()).collect(),
        estimates,
        mse,
        area_fits,
    })
}

/// Grid fit followed by the area estimates, with the default grid.
pub fn fit_mq_areas(data: &SurveyDataset, psi: HuberPsi, options: MqOptions) -> Result<(MqGridFit, MqAreaFit)> {
    let grid = fit_grid(data, &default_grid(), psi, options)?;
    let areas = mq_area_estimate(data, &grid, psi, options)?;
    Ok((grid, areas))
}
