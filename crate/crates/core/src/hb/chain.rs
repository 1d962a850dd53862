//! Multi-chain driver and draw storage.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::conditionals::check_effect_prior;
use super::dg::{dg_gibbs_step, DgPrior, DgState};
use super::init::{jitter, StartingValues};
use super::nm::{nm_gibbs_step, NmPrior, NmState};
use crate::error::{Result, SaeError};
use crate::model::{compose_area_mean, theta, SurveyDataset, UnsampledCovariates};
use crate::samplers::{draw_bernoulli, draw_normal, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HbModel {
    /// Normal errors (`π ∝ 1/σ_e²`).
    Dg,
    /// Two-component normal mixture errors.
    Nm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Predictand {
    #[default]
    Theta,
    Ybar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    #[serde(default)]
    pub predictand: Predictand,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            iterations: 25_000,
            burn_in: 5_000,
            thin: 1,
            chains: 4,
            seed: 1,
            predictand: Predictand::Theta,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.iterations == 0 {
            errs.push("iterations must be positive".to_string());
        }
        if self.burn_in >= self.iterations {
            errs.push(format!(
                "burn_in ({}) must be less than iterations ({})",
                self.burn_in, self.iterations
            ));
        }
        if self.thin == 0 {
            errs.push("thin must be at least 1".to_string());
        }
        if self.chains == 0 {
            errs.push("chains must be positive".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SaeError::Validation(errs))
        }
    }

    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Priors for either model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HbPrior {
    Dg(DgPrior),
    Nm(NmPrior),
}

impl HbPrior {
    pub fn default_for(model: HbModel) -> Self {
        match model {
            HbModel::Dg => HbPrior::Dg(DgPrior::default()),
            HbModel::Nm => HbPrior::Nm(NmPrior::default()),
        }
    }

    pub fn model(&self) -> HbModel {
        match self {
            HbPrior::Dg(_) => HbModel::Dg,
            HbPrior::Nm(_) => HbModel::Nm,
        }
    }
}

/// Retained draws of one chain, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    /// `params[k][t]` for the k-th name in `PosteriorDraws::parameter_names`.
    pub params: Vec<Vec<f64>>,
    /// `theta[i][t]`.
    pub theta: Vec<Vec<f64>>,
    pub ybar: Option<Vec<Vec<f64>>>,
    /// Per unit, the number of retained iterates with `z = 0`.
    pub outlier_counts: Vec<u32>,
}

impl ChainDraws {
    pub fn len(&self) -> usize {
        self.theta.first().or(self.params.first()).map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub model: HbModel,
    pub config: GibbsConfig,
    pub area_ids: Vec<u32>,
    /// Unit keys `(area_id, unit_id)` in dataset order.
    pub units: Vec<(u32, u32)>,
    pub parameter_names: Vec<String>,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    pub fn parameter_index(&self, name: &str) -> Option<usize> {
        self.parameter_names.iter().position(|n| n == name)
    }

    /// Per-chain series of one named parameter.
    pub fn parameter(&self, name: &str) -> Option<Vec<&[f64]>> {
        let k = self.parameter_index(name)?;
        Some(self.chains.iter().map(|c| c.params[k].as_slice()).collect())
    }

    /// All chains of one parameter concatenated.
    pub fn pooled(&self, name: &str) -> Option<Vec<f64>> {
        self.parameter(name).map(|cs| cs.concat())
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(ChainDraws::len).sum()
    }
}

fn parameter_names(model: HbModel, p: usize, m: usize) -> Vec<String> {
    let mut names: Vec<String> = (0..p).map(|k| format!("beta_{k}")).collect();
    names.push("sigma_v2".into());
    match model {
        HbModel::Dg => names.push("sigma_e2".into()),
        HbModel::Nm => names.extend(["sigma1_2".into(), "sigma2_2".into(), "p_e".into()]),
    }
    names.extend((1..=m).map(|i| format!("v_{i}")));
    names
}

/// Parameters that enter the convergence gate.
pub fn is_gated(name: &str) -> bool {
    name.starts_with("beta_") || name.starts_with("sigma") || name == "p_e"
}

enum State {
    Dg(DgState),
    Nm(NmState),
}

impl State {
    fn beta(&self) -> &[f64] {
        match self {
            State::Dg(s) => &s.beta,
            State::Nm(s) => &s.beta,
        }
    }

    fn v(&self) -> &[f64] {
        match self {
            State::Dg(s) => &s.v,
            State::Nm(s) => &s.v,
        }
    }

    fn values(&self) -> Vec<f64> {
        let mut out = self.beta().to_vec();
        match self {
            State::Dg(s) => out.extend([s.sigma_v2, s.sigma_e2]),
            State::Nm(s) => out.extend([s.sigma_v2, s.sigma1_2, s.sigma2_2, s.p_e]),
        }
        out.extend_from_slice(self.v());
        out
    }

    fn unit_error(&self, rng: &mut RngStream) -> Result<f64> {
        match self {
            State::Dg(s) => draw_normal(rng, 0.0, s.sigma_e2),
            State::Nm(s) => {
                let var = if draw_bernoulli(rng, s.p_e)? {
                    s.sigma1_2
                } else {
                    s.sigma2_2
                };
                draw_normal(rng, 0.0, var)
            }
        }
    }
}

fn composed_means(
    state: &State,
    data: &SurveyDataset,
    unsampled: &UnsampledCovariates,
    sampled_sums: &[f64],
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let beta = state.beta();
    let v = state.v();
    let mut out = Vec::with_capacity(data.m());
    let mut draws = Vec::new();
    for (i, area) in data.areas().iter().enumerate() {
        draws.clear();
        for row in &unsampled.areas[i] {
            let mu: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + v[i];
            draws.push(mu + state.unit_error(rng)?);
        }
        out.push(compose_area_mean(area, sampled_sums[i], &draws)?);
    }
    Ok(out)
}

fn run_one(
    data: &SurveyDataset,
    prior: &HbPrior,
    config: &GibbsConfig,
    start: &StartingValues,
    unsampled: Option<&UnsampledCovariates>,
    mut rng: RngStream,
) -> Result<ChainDraws> {
    let mut state = match prior {
        HbPrior::Dg(_) => State::Dg(DgState::from_start(start, jitter(&mut rng))),
        HbPrior::Nm(_) => State::Nm(NmState::from_start(start, jitter(&mut rng))),
    };
    let n_params = parameter_names(prior.model(), data.p(), data.m()).len();
    let keep = config.retained();
    let mut params = vec![Vec::with_capacity(keep); n_params];
    let mut thetas = vec![Vec::with_capacity(keep); data.m()];
    let mut ybar = unsampled.map(|_| vec![Vec::with_capacity(keep); data.m()]);
    let mut outlier_counts = vec![0u32; data.n()];
    let y = data.response();
    let sampled_sums: Vec<f64> = (0..data.m())
        .map(|i| data.members(i).iter().map(|&j| y[j]).sum())
        .collect();

    for it in 0..config.iterations {
        match (&mut state, prior) {
            (State::Dg(s), HbPrior::Dg(p)) => dg_gibbs_step(s, data, p, &mut rng)?,
            (State::Nm(s), HbPrior::Nm(p)) => nm_gibbs_step(s, data, p, &mut rng)?,
            _ => unreachable!("state built from the prior"),
        }
        if it < config.burn_in || (it - config.burn_in) % config.thin != 0 {
            continue;
        }
        for (col, val) in params.iter_mut().zip(state.values()) {
            col.push(val);
        }
        for (i, area) in data.areas().iter().enumerate() {
            thetas[i].push(theta(area, state.beta(), state.v()[i])?);
        }
        if let State::Nm(s) = &state {
            for (c, &z) in outlier_counts.iter_mut().zip(&s.z) {
                *c += u32::from(!z);
            }
        }
        if let (Some(cols), Some(unsampled)) = (ybar.as_mut(), unsampled) {
            let means = composed_means(&state, data, unsampled, &sampled_sums, &mut rng)?;
            for (col, val) in cols.iter_mut().zip(means) {
                col.push(val);
            }
        }
    }
    Ok(ChainDraws {
        params,
        theta: thetas,
        ybar,
        outlier_counts,
    })
}

/// Runs `config.chains` chains in parallel under the default noninformative
/// priors.
pub fn run_chain(
    model: HbModel,
    data: &SurveyDataset,
    config: &GibbsConfig,
    unsampled: Option<&UnsampledCovariates>,
) -> Result<PosteriorDraws> {
    run_chain_with_prior(&HbPrior::default_for(model), data, config, unsampled)
}

pub fn run_chain_with_prior(
    prior: &HbPrior,
    data: &SurveyDataset,
    config: &GibbsConfig,
    unsampled: Option<&UnsampledCovariates>,
) -> Result<PosteriorDraws> {
    config.validate()?;
    data.require_dof()?;
    let effect_prior = match prior {
        HbPrior::Dg(p) => p.sigma_v2,
        HbPrior::Nm(p) => p.sigma_v2,
    };
    check_effect_prior(data.m(), effect_prior)?;
    let unsampled = match config.predictand {
        Predictand::Theta => None,
        Predictand::Ybar => {
            let u = unsampled.ok_or_else(|| {
                SaeError::validation("the ybar predictand needs covariates for the unsampled units")
            })?;
            u.check(data)?;
            Some(u)
        }
    };
    let start = StartingValues::from_data(data)?;
    let root = RngStream::new(config.seed, 0);
    let chains = (0..config.chains)
        .into_par_iter()
        .map(|c| run_one(data, prior, config, &start, unsampled, root.child(c as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws {
        model: prior.model(),
        config: config.clone(),
        area_ids: data.areas().iter().map(|a| a.area_id).collect(),
        units: data.records().iter().map(|r| (r.area_id, r.unit_id)).collect(),
        parameter_names: parameter_names(prior.model(), data.p(), data.m()),
        chains,
    })
}

#[derive(Debug, Serialize)]
struct TraceManifest<'a> {
    model: HbModel,
    config: &'a GibbsConfig,
    seed: u64,
    files: Vec<String>,
    columns: Vec<String>,
}

/// Writes one CSV per chain (`trace_chain<k>.csv`, one row per retained
/// iterate) and `trace_manifest.json` into `dir`.
pub fn write_traces(draws: &PosteriorDraws, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut columns = vec!["iteration".to_string()];
    columns.extend(draws.parameter_names.iter().cloned());
    columns.extend(draws.area_ids.iter().map(|a| format!("theta_{a}")));
    let has_ybar = draws.chains.first().is_some_and(|c| c.ybar.is_some());
    if has_ybar {
        columns.extend(draws.area_ids.iter().map(|a| format!("ybar_{a}")));
    }
    let mut files = Vec::new();
    for (k, chain) in draws.chains.iter().enumerate() {
        let name = format!("trace_chain{}.csv", k + 1);
        let mut w = csv::Writer::from_path(dir.join(&name))?;
        w.write_record(&columns)?;
        for t in 0..chain.len() {
            let iter = draws.config.burn_in + t * draws.config.thin + 1;
            let mut row = vec![iter.to_string()];
            row.extend(chain.params.iter().map(|c| c[t].to_string()));
            row.extend(chain.theta.iter().map(|c| c[t].to_string()));
            if let Some(yb) = &chain.ybar {
                row.extend(yb.iter().map(|c| c[t].to_string()));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        files.push(name);
    }
    let manifest = TraceManifest {
        model: draws.model,
        config: &draws.config,
        seed: draws.config.seed,
        files,
        columns,
    };
    let mut f = std::fs::File::create(dir.join("trace_manifest.json"))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    Ok(())
}
