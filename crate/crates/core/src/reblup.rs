//! Robust EBLUP for the nested error model.
//!
//! The mixed-model equations and the ML variance equations are robustified
//! with Huber's ψ. With `σ_e` and `σ_v` the current standard deviations,
//!
//! ```text
//! Σ_j x_j ψ(r_j/σ_e)/σ_e = 0
//! Σ_{j∈i} ψ(r_j/σ_e)/σ_e − ψ(v_i/σ_v)/σ_v = 0
//! ```
//!
//! are solved by IRLS on a weighted Henderson system, and the variance
//! components by the fixed point
//!
//! ```text
//! σ_v² ← σ_v² Σ_i ψ²(v_i/σ_v) / (K (m − Σ_i d_i/σ_v²))
//! σ_e² ← σ_e² Σ_j ψ²(r_j/σ_e) / (K (n − Σ_i n_i d_i/σ_e²))
//! ```
//!
//! with `d_i = (n_i/σ_e² + 1/σ_v²)⁻¹` and `K = E ψ²(U)`. For large `c`
//! these reduce to the classical ML fixed-point equations.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Result, SaeError};
use crate::linalg::ols;
use crate::model::{theta, SurveyDataset};
use crate::samplers::{draw_normal, RngStream};

pub const DEFAULT_C: f64 = 1.345;
const VARIANCE_FLOOR: f64 = 1e-8;

/// Huber's ψ with its consistency constant `K = E ψ²(U)`, `U ~ N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuberPsi {
    pub c: f64,
    pub k: f64,
}

impl HuberPsi {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(SaeError::invalid(format!("huber constant must be positive, got {c}")));
        }
        Ok(HuberPsi {
            c,
            k: huber_consistency(c),
        })
    }

    pub fn psi(&self, u: f64) -> f64 {
        huber_psi(u, self.c)
    }

    /// `ψ(u)/u`, with the limit 1 at zero.
    pub fn weight(&self, u: f64) -> f64 {
        if u.abs() <= self.c {
            1.0
        } else {
            self.c / u.abs()
        }
    }
}

impl Default for HuberPsi {
    fn default() -> Self {
        HuberPsi::new(DEFAULT_C).expect("positive constant")
    }
}

pub fn huber_psi(u: f64, c: f64) -> f64 {
    u.clamp(-c, c)
}

/// `c²(1 − P(|U| ≤ c)) + P(|U| ≤ c) − 2cφ(c)`.
pub fn huber_consistency(c: f64) -> f64 {
    if c.is_infinite() {
        return 1.0;
    }
    let inside = erf(c / std::f64::consts::SQRT_2);
    let phi = (-0.5 * c * c).exp() / (2.0 * std::f64::consts::PI).sqrt();
    c * c * (1.0 - inside) + inside - 2.0 * c * phi
}

/// Variance components `(σ_v², σ_e²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub sigma_v2: f64,
    pub sigma_e2: f64,
}

impl VarianceComponents {
    fn check(&self) -> Result<()> {
        if self.sigma_v2 > 0.0 && self.sigma_e2 > 0.0 && self.sigma_v2.is_finite() && self.sigma_e2.is_finite() {
            Ok(())
        } else {
            Err(SaeError::invalid(format!(
                "variance components must be positive and finite, got {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectsSolution {
    pub beta: Vec<f64>,
    pub v: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReblupFit {
    pub beta: Vec<f64>,
    pub delta: VarianceComponents,
    pub v: Vec<f64>,
    /// `X̄_iᵀβ̂ + v̂_i` per area.
    pub theta: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    /// Largest relative change in the final outer iteration: `(β, v)` against
    /// their largest magnitude, the variances against `σ_v² + σ_e²`.
    pub final_residual_norm: f64,
    pub psi: HuberPsi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReblupOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Iteration cap for each inner IRLS solve.
    pub inner_max_iter: usize,
}

impl Default for ReblupOptions {
    fn default() -> Self {
        ReblupOptions {
            tol: 1e-6,
            max_iter: 200,
            inner_max_iter: 100,
        }
    }
}

fn fitted(data: &SurveyDataset, beta: &[f64], j: usize) -> f64 {
    let x = data.design();
    (0..data.p()).map(|k| x[(j, k)] * beta[k]).sum()
}

fn relative_change(old: &[f64], new: &[f64]) -> f64 {
    let scale = old.iter().fold(0.0_f64, |a, b| a.max(b.abs())).max(1e-12);
    old.iter()
        .zip(new)
        .fold(0.0_f64, |a, (o, n)| a.max((o - n).abs()))
        / scale
}

/// Solves the weighted Henderson system for fixed unit weights `w` and area
/// weights `u`, eliminating `v` area by area.
fn henderson_solve(
    data: &SurveyDataset,
    delta: VarianceComponents,
    w: &[f64],
    u: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = data.p();
    let x = data.design();
    let y = data.response();
    let se2 = delta.sigma_e2;
    let mut lhs = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut per_area = Vec::with_capacity(data.m());
    for i in 0..data.m() {
        let mut s = DVector::<f64>::zeros(p);
        let mut t = 0.0;
        let mut a = 0.0;
        for &j in data.members(i) {
            let wj = w[j] / se2;
            a += wj;
            t += wj * y[j];
            for k in 0..p {
                s[k] += wj * x[(j, k)];
                rhs[k] += wj * x[(j, k)] * y[j];
                for l in 0..p {
                    lhs[(k, l)] += wj * x[(j, k)] * x[(j, l)];
                }
            }
        }
        let d = a + u[i] / delta.sigma_v2;
        lhs -= &s * s.transpose() / d;
        rhs -= &s * (t / d);
        per_area.push((s, t, d));
    }
    let chol = lhs
        .cholesky()
        .ok_or_else(|| SaeError::Singular("weighted Henderson system is not positive definite".into()))?;
    let beta = chol.solve(&rhs);
    let v = per_area
        .iter()
        .map(|(s, t, d)| (t - s.dot(&beta)) / d)
        .collect();
    Ok((beta.iter().copied().collect(), v))
}

/// IRLS for the robustified mixed-model equations at fixed variances,
/// starting from `beta` and `v`.
pub fn robust_effects_solve_from(
    data: &SurveyDataset,
    beta: &[f64],
    v: &[f64],
    delta: VarianceComponents,
    psi: HuberPsi,
    tol: f64,
    max_iter: usize,
) -> Result<EffectsSolution> {
    delta.check()?;
    crate::error::check_dim("beta", data.p(), beta.len())?;
    crate::error::check_dim("random effects", data.m(), v.len())?;
    let (se, sv) = (delta.sigma_e2.sqrt(), delta.sigma_v2.sqrt());
    let y = data.response();
    let mut params: Vec<f64> = beta.iter().chain(v).copied().collect();
    let p = data.p();
    for it in 1..=max_iter {
        let (b, v) = params.split_at(p);
        let w: Vec<f64> = (0..data.n())
            .map(|j| psi.weight((y[j] - fitted(data, b, j) - v[data.area_of(j)]) / se))
            .collect();
        let u: Vec<f64> = v.iter().map(|vi| psi.weight(vi / sv)).collect();
        let (nb, nv) = henderson_solve(data, delta, &w, &u)?;
        let next: Vec<f64> = nb.into_iter().chain(nv).collect();
        let change = relative_change(&params, &next);
        params = next;
        if change < tol {
            let (b, v) = params.split_at(p);
            return Ok(EffectsSolution {
                beta: b.to_vec(),
                v: v.to_vec(),
                iterations: it,
                converged: true,
            });
        }
    }
    let (b, v) = params.split_at(p);
    Ok(EffectsSolution {
        beta: b.to_vec(),
        v: v.to_vec(),
        iterations: max_iter,
        converged: false,
    })
}

/// As [`robust_effects_solve_from`] with `v = 0` to start.
pub fn robust_effects_solve(
    data: &SurveyDataset,
    beta: &[f64],
    delta: VarianceComponents,
    psi: HuberPsi,
    tol: f64,
    max_iter: usize,
) -> Result<EffectsSolution> {
    robust_effects_solve_from(data, beta, &vec![0.0; data.m()], delta, psi, tol, max_iter)
}

/// One fixed-point step of the robustified variance equations.
pub fn robust_variance_update(
    data: &SurveyDataset,
    beta: &[f64],
    v: &[f64],
    delta: VarianceComponents,
    psi: HuberPsi,
) -> Result<VarianceComponents> {
    delta.check()?;
    let (sv2, se2) = (delta.sigma_v2, delta.sigma_e2);
    let (sv, se) = (sv2.sqrt(), se2.sqrt());
    let y = data.response();

    let mut lev_v = 0.0;
    let mut lev_e = 0.0;
    for i in 0..data.m() {
        let ni = data.members(i).len() as f64;
        let d = 1.0 / (ni / se2 + 1.0 / sv2);
        lev_v += d / sv2;
        lev_e += ni * d / se2;
    }
    let ss_v: f64 = v.iter().map(|vi| psi.psi(vi / sv).powi(2)).sum();
    let ss_e: f64 = (0..data.n())
        .map(|j| psi.psi((y[j] - fitted(data, beta, j) - v[data.area_of(j)]) / se).powi(2))
        .sum();
    let step = |old: f64, ss: f64, count: f64| {
        let new = old * ss / (psi.k * count);
        // halve instead of stepping to a non-positive value
        let new = if new > 0.0 { new } else { 0.5 * old };
        new.max(VARIANCE_FLOOR)
    };
    let out = VarianceComponents {
        sigma_v2: step(sv2, ss_v, data.m() as f64 - lev_v),
        sigma_e2: step(se2, ss_e, data.n() as f64 - lev_e),
    };
    if !(out.sigma_v2.is_finite() && out.sigma_e2.is_finite()) {
        return Err(SaeError::NonConvergence(format!(
            "variance update produced non-finite values {out:?}"
        )));
    }
    Ok(out)
}

fn starting_delta(data: &SurveyDataset, beta: &[f64]) -> VarianceComponents {
    let y = data.response();
    let r: Vec<f64> = (0..data.n()).map(|j| y[j] - fitted(data, beta, j)).collect();
    let means: Vec<f64> = (0..data.m())
        .filter(|&i| !data.members(i).is_empty())
        .map(|i| {
            let m = data.members(i);
            m.iter().map(|&j| r[j]).sum::<f64>() / m.len() as f64
        })
        .collect();
    let within: f64 = (0..data.n())
        .map(|j| {
            let m = data.members(data.area_of(j));
            let mean = m.iter().map(|&k| r[k]).sum::<f64>() / m.len() as f64;
            (r[j] - mean).powi(2)
        })
        .sum();
    let dof = (data.n() - means.len()).max(1) as f64;
    let total = crate::diagnostics::variance(&r).max(1e-6);
    let sigma_e2 = (within / dof).max(1e-3 * total);
    VarianceComponents {
        sigma_v2: crate::diagnostics::variance(&means).max(1e-3 * total),
        sigma_e2,
    }
}

fn finish(
    data: &SurveyDataset,
    psi: HuberPsi,
    beta: Vec<f64>,
    v: Vec<f64>,
    delta: VarianceComponents,
    iterations_used: usize,
    converged: bool,
    final_residual_norm: f64,
) -> Result<ReblupFit> {
    let theta = data
        .areas()
        .iter()
        .zip(&v)
        .map(|(a, &vi)| theta(a, &beta, vi))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReblupFit {
        beta,
        delta,
        v,
        theta,
        iterations_used,
        converged,
        final_residual_norm,
        psi,
    })
}

/// Alternates the effects solve and the variance step from the given start.
pub fn fit_reblup_from(
    data: &SurveyDataset,
    psi: HuberPsi,
    options: ReblupOptions,
    start: Option<&ReblupFit>,
) -> Result<ReblupFit> {
    if data.m() < 2 {
        return Err(SaeError::validation("robust EBLUP needs at least 2 areas"));
    }
    data.require_dof()?;
    let (mut beta, mut v, mut delta) = match start {
        Some(f) => (f.beta.clone(), f.v.clone(), f.delta),
        None => {
            let b = ols(data.design(), data.response().as_slice())?;
            let d = starting_delta(data, &b);
            (b, vec![0.0; data.m()], d)
        }
    };
    let mut change = f64::INFINITY;
    for it in 1..=options.max_iter {
        let eff = robust_effects_solve_from(data, &beta, &v, delta, psi, options.tol * 0.1, options.inner_max_iter)?;
        let next = robust_variance_update(data, &eff.beta, &eff.v, delta, psi)?;
        let old: Vec<f64> = beta.iter().chain(&v).copied().collect();
        let new: Vec<f64> = eff.beta.iter().chain(&eff.v).copied().collect();
        // variance moves are measured against the total variance so that a
        // component drifting to the floor does not stall convergence
        let total = delta.sigma_v2 + delta.sigma_e2;
        change = relative_change(&old, &new)
            .max((next.sigma_v2 - delta.sigma_v2).abs() / total)
            .max((next.sigma_e2 - delta.sigma_e2).abs() / total);
        beta = eff.beta;
        v = eff.v;
        delta = next;
        if change < options.tol && eff.converged {
            // effects consistent with the final variances
            let eff = robust_effects_solve_from(data, &beta, &v, delta, psi, options.tol * 0.1, options.inner_max_iter)?;
            return finish(data, psi, eff.beta, eff.v, delta, it, true, change);
        }
    }
    finish(data, psi, beta, v, delta, options.max_iter, false, change)
}

pub fn fit_reblup(data: &SurveyDataset, psi: HuberPsi, options: ReblupOptions) -> Result<ReblupFit> {
    fit_reblup_from(data, psi, options, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapMse {
    pub mse: Vec<f64>,
    pub replicates: usize,
    pub failed: usize,
}

/// Parametric bootstrap MSE of the REBLUP predictions of `θ_i`.
///
/// Each replicate draws `v* ~ N(0, σ̂_v²)` and `e* ~ N(0, σ̂_e²)` on its own
/// child stream of `rng`, refits from the original estimates and records
/// the squared error against `X̄_iᵀβ̂ + v_i*`. Replicates whose refit does
/// not converge are dropped; more than 10% of them is an error.
pub fn bootstrap_mse(
    fit: &ReblupFit,
    data: &SurveyDataset,
    replicates: usize,
    options: ReblupOptions,
    rng: &RngStream,
) -> Result<BootstrapMse> {
    if replicates == 0 {
        return Err(SaeError::invalid("bootstrap needs at least one replicate"));
    }
    let results = (0..replicates)
        .into_par_iter()
        .map(|b| -> Result<Option<Vec<f64>>> {
            let mut r = rng.child(b as u64);
            let v_star = (0..data.m())
                .map(|_| draw_normal(&mut r, 0.0, fit.delta.sigma_v2))
                .collect::<Result<Vec<_>>>()?;
            let y_star = (0..data.n())
                .map(|j| {
                    Ok(fitted(data, &fit.beta, j)
                        + v_star[data.area_of(j)]
                        + draw_normal(&mut r, 0.0, fit.delta.sigma_e2)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let boot = data.with_responses(&y_star)?;
            let refit = match fit_reblup_from(&boot, fit.psi, options, Some(fit)) {
                Ok(f) if f.converged => f,
                Ok(_) | Err(SaeError::Singular(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            Ok(Some(
                data.areas()
                    .iter()
                    .zip(&v_star)
                    .zip(&refit.theta)
                    .map(|((a, &vs), &est)| {
                        let truth = theta(a, &fit.beta, vs)?;
                        Ok((est - truth).powi(2))
                    })
                    .collect::<Result<Vec<_>>>()?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let ok: Vec<&Vec<f64>> = results.iter().flatten().collect();
    let failed = replicates - ok.len();
    if failed * 10 > replicates {
        return Err(SaeError::NonConvergence(format!(
            "{failed} of {replicates} bootstrap refits did not converge"
        )));
    }
    let mut mse = vec![0.0; data.m()];
    for rep in &ok {
        for (acc, e) in mse.iter_mut().zip(rep.iter()) {
            *acc += e;
        }
    }
    for acc in &mut mse {
        *acc /= ok.len() as f64;
    }
    Ok(BootstrapMse {
        mse,
        replicates: ok.len(),
        failed,
    })
}
