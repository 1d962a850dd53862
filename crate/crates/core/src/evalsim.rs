//! Design-based simulation study: finite populations under the nested error
//! model with normal, contaminated normal or `t₄` unit errors, repeated
//! simple random samples, and empirical bias, MSE, MSE-estimator bias,
//! coverage and interval length for each predictor.
//!
//! Covariates are drawn once per study seed and reused by every replicate.
//! Replicate `r` uses its own child stream, so results do not depend on the
//! number of worker threads.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaeError};
use crate::hb::{run_chain, summarize, GibbsConfig, HbModel, Predictand};
use crate::model::{AreaInfo, SurveyDataset, UnitRecord};
use crate::mquantile::{fit_mq_areas, MqOptions};
use crate::reblup::{bootstrap_mse, fit_reblup, HuberPsi, ReblupOptions};
use crate::samplers::{draw_normal, draw_student_t, RngStream};

const Z90: f64 = 1.644_853_626_951_472_2;
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorLaw {
    /// `N(0, 1)`.
    #[serde(alias = "none")]
    Normal,
    /// `0.9·N(0, 1) + 0.1·N(0, 25)`.
    Mixture,
    /// Student `t` with 4 degrees of freedom.
    T4,
}

impl ErrorLaw {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "none" | "normal" => Ok(ErrorLaw::Normal),
            "mixture" => Ok(ErrorLaw::Mixture),
            "t4" => Ok(ErrorLaw::T4),
            other => Err(SaeError::invalid(format!(
                "unknown scenario {other:?} (expected none, mixture or t4)"
            ))),
        }
    }

    pub fn draw(&self, rng: &mut RngStream) -> Result<f64> {
        match self {
            ErrorLaw::Normal => Ok(rng.standard_normal()),
            ErrorLaw::Mixture => {
                let sd = if rng.uniform() < 0.1 { 5.0 } else { 1.0 };
                Ok(sd * rng.standard_normal())
            }
            ErrorLaw::T4 => draw_student_t(rng, 4.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub m: usize,
    pub population_size: usize,
    pub sample_size: usize,
    /// Intercept and slope.
    pub beta: [f64; 2],
    pub sigma_v2: f64,
    pub error_law: ErrorLaw,
    pub replicates: usize,
    pub seed: u64,
}

impl SimScenario {
    pub fn standard(error_law: ErrorLaw, replicates: usize, seed: u64) -> Self {
        SimScenario {
            m: 40,
            population_size: 200,
            sample_size: 4,
            beta: [1.0, 1.0],
            sigma_v2: 1.0,
            error_law,
            replicates,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.m == 0 {
            errs.push("need at least one area".to_string());
        }
        if self.sample_size > self.population_size {
            errs.push(format!(
                "sample size {} exceeds population size {}",
                self.sample_size, self.population_size
            ));
        }
        if self.replicates == 0 {
            errs.push("need at least one replicate".to_string());
        }
        if !(self.sigma_v2 > 0.0) {
            errs.push(format!("sigma_v2 must be positive, got {}", self.sigma_v2));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SaeError::Validation(errs))
        }
    }

    fn root(&self) -> RngStream {
        RngStream::new(self.seed, 0)
    }

    fn replicate_stream(&self, r: usize) -> RngStream {
        self.root().child(1 + r as u64)
    }
}

/// One finite population. Units of area `i` occupy
/// `i·N .. (i+1)·N` in `x` and `y`.
#[derive(Debug, Clone)]
pub struct Population {
    pub x: Arc<Vec<f64>>,
    pub y: Vec<f64>,
    pub v: Vec<f64>,
    pub xbar: Vec<f64>,
    /// `β₀ + β₁X̄_i + v_i`.
    pub theta: Vec<f64>,
    pub ybar: Vec<f64>,
    pub area_size: usize,
}

/// The study's fixed covariates, `x ~ N(1, 1)`.
pub fn generate_covariates(scenario: &SimScenario) -> Arc<Vec<f64>> {
    let mut rng = scenario.root().child(0);
    let total = scenario.m * scenario.population_size;
    Arc::new((0..total).map(|_| 1.0 + rng.standard_normal()).collect())
}

pub fn generate_population(
    scenario: &SimScenario,
    x: &Arc<Vec<f64>>,
    rng: &mut RngStream,
) -> Result<Population> {
    scenario.validate()?;
    let big_n = scenario.population_size;
    crate::error::check_dim("covariates", scenario.m * big_n, x.len())?;
    let [b0, b1] = scenario.beta;
    let v = (0..scenario.m)
        .map(|_| draw_normal(rng, 0.0, scenario.sigma_v2))
        .collect::<Result<Vec<_>>>()?;
    let mut y = Vec::with_capacity(x.len());
    for (k, &xk) in x.iter().enumerate() {
        y.push(b0 + b1 * xk + v[k / big_n] + scenario.error_law.draw(rng)?);
    }
    let area_mean = |vals: &[f64], i: usize| vals[i * big_n..(i + 1) * big_n].iter().sum::<f64>() / big_n as f64;
    let xbar: Vec<f64> = (0..scenario.m).map(|i| area_mean(x, i)).collect();
    let ybar: Vec<f64> = (0..scenario.m).map(|i| area_mean(&y, i)).collect();
    let theta = xbar.iter().zip(&v).map(|(xb, vi)| b0 + b1 * xb + vi).collect();
    Ok(Population {
        x: Arc::clone(x),
        y,
        v,
        xbar,
        theta,
        ybar,
        area_size: big_n,
    })
}

/// Simple random sample without replacement of `n_i` units per area.
pub fn draw_srs(population: &Population, n_i: usize, rng: &mut RngStream) -> Result<SurveyDataset> {
    let big_n = population.area_size;
    if n_i > big_n {
        return Err(SaeError::invalid(format!("sample size {n_i} exceeds population size {big_n}")));
    }
    let m = population.v.len();
    let mut records = Vec::with_capacity(m * n_i);
    for i in 0..m {
        let mut picked = sample(rng, big_n, n_i).into_vec();
        picked.sort_unstable();
        for (u, k) in picked.into_iter().enumerate() {
            let idx = i * big_n + k;
            records.push(UnitRecord {
                area_id: i as u32 + 1,
                unit_id: u as u32 + 1,
                y: population.y[idx],
                x: vec![1.0, population.x[idx]],
            });
        }
    }
    let areas = (0..m)
        .map(|i| AreaInfo {
            area_id: i as u32 + 1,
            population: big_n,
            sampled: n_i,
            xbar: vec![1.0, population.xbar[i]],
        })
        .collect();
    SurveyDataset::new(records, areas)
}

/// Point predictions with their uncertainty and intervals for every area.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub estimate: Vec<f64>,
    /// Posterior variance or estimated MSE.
    pub uncertainty: Vec<f64>,
    pub ci90: Vec<(f64, f64)>,
    pub ci95: Vec<(f64, f64)>,
}

impl Prediction {
    /// Symmetric normal intervals `θ̂ ± z·√mse`.
    pub fn symmetric(estimate: Vec<f64>, mse: Vec<f64>) -> Self {
        let band = |z: f64| {
            estimate
                .iter()
                .zip(&mse)
                .map(|(e, m)| (e - z * m.sqrt(), e + z * m.sqrt()))
                .collect()
        };
        Prediction {
            ci90: band(Z90),
            ci95: band(Z95),
            estimate,
            uncertainty: mse,
        }
    }
}

pub trait Predictor: Sync {
    fn name(&self) -> &str;
    /// `truth` is only for test doubles; real predictors ignore it.
    fn predict(&self, data: &SurveyDataset, rng: &mut RngStream, truth: &[f64]) -> Result<Prediction>;
}

pub struct HbPredictor {
    pub model: HbModel,
    pub config: GibbsConfig,
}

impl Predictor for HbPredictor {
    fn name(&self) -> &str {
        match self.model {
            HbModel::Dg => "dg",
            HbModel::Nm => "nm",
        }
    }

    fn predict(&self, data: &SurveyDataset, rng: &mut RngStream, _: &[f64]) -> Result<Prediction> {
        let mut config = self.config.clone();
        config.seed = rand::RngCore::next_u64(rng);
        config.predictand = Predictand::Theta;
        let draws = run_chain(self.model, data, &config, None)?;
        let summary = summarize(&draws, &[0.90, 0.95])?;
        let pick = |level: f64| {
            summary
                .areas
                .iter()
                .map(|a| a.interval(level).map(|i| (i.lower, i.upper)).unwrap_or((f64::NAN, f64::NAN)))
                .collect()
        };
        Ok(Prediction {
            estimate: summary.means(),
            uncertainty: summary.sds().iter().map(|s| s * s).collect(),
            ci90: pick(0.90),
            ci95: pick(0.95),
        })
    }
}

pub struct ReblupPredictor {
    pub psi: HuberPsi,
    pub options: ReblupOptions,
    pub bootstrap: usize,
}

impl Predictor for ReblupPredictor {
    fn name(&self) -> &str {
        "sr"
    }

    fn predict(&self, data: &SurveyDataset, rng: &mut RngStream, _: &[f64]) -> Result<Prediction> {
        let fit = fit_reblup(data, self.psi, self.options)?;
        if !fit.converged {
            return Err(SaeError::NonConvergence("REBLUP did not converge".into()));
        }
        let boot = bootstrap_mse(&fit, data, self.bootstrap, self.options, rng)?;
        Ok(Prediction::symmetric(fit.theta, boot.mse))
    }
}

pub struct MqPredictor {
    pub psi: HuberPsi,
    pub options: MqOptions,
}

impl Predictor for MqPredictor {
    fn name(&self) -> &str {
        "mq"
    }

    fn predict(&self, data: &SurveyDataset, _: &mut RngStream, _: &[f64]) -> Result<Prediction> {
        let (_, fit) = fit_mq_areas(data, self.psi, self.options)?;
        Ok(Prediction::symmetric(fit.estimates, fit.mse))
    }
}

/// Settings for the four standard predictors inside the study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub hb: GibbsConfig,
    pub bootstrap: usize,
    pub c: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            hb: GibbsConfig {
                iterations: 6_000,
                burn_in: 1_000,
                thin: 1,
                chains: 2,
                seed: 0,
                predictand: Predictand::Theta,
            },
            bootstrap: 100,
            c: crate::reblup::DEFAULT_C,
        }
    }
}

/// Builds predictors for method names among `dg`, `nm`, `sr`, `mq`.
pub fn standard_predictors(methods: &[String], config: &StudyConfig) -> Result<Vec<Box<dyn Predictor>>> {
    let psi = HuberPsi::new(config.c)?;
    methods
        .iter()
        .map(|m| -> Result<Box<dyn Predictor>> {
            Ok(match m.as_str() {
                "dg" => Box::new(HbPredictor {
                    model: HbModel::Dg,
                    config: config.hb.clone(),
                }),
                "nm" => Box::new(HbPredictor {
                    model: HbModel::Nm,
                    config: config.hb.clone(),
                }),
                "sr" => Box::new(ReblupPredictor {
                    psi,
                    options: ReblupOptions::default(),
                    bootstrap: config.bootstrap,
                }),
                "mq" => Box::new(MqPredictor {
                    psi,
                    options: MqOptions::default(),
                }),
                other => {
                    return Err(SaeError::invalid(format!(
                        "unknown method {other:?} (expected dg, nm, sr or mq)"
                    )))
                }
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaMetrics {
    pub area_id: u32,
    pub e_b: f64,
    pub e_m: f64,
    /// `(mean uncertainty − eM) / eM`.
    pub re: f64,
    pub coverage90: f64,
    pub coverage95: f64,
    pub len90: f64,
    pub len95: f64,
}

impl AreaMetrics {
    pub const NAMES: [&'static str; 7] = ["eB", "eM", "RE", "coverage90", "coverage95", "len90", "len95"];

    pub fn values(&self) -> [f64; 7] {
        [
            self.e_b,
            self.e_m,
            self.re,
            self.coverage90,
            self.coverage95,
            self.len90,
            self.len95,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub replicates_used: usize,
    pub failures: usize,
    /// First few failure messages, for the report.
    pub failure_messages: Vec<String>,
    pub areas: Vec<AreaMetrics>,
}

impl MethodMetrics {
    pub fn failure_rate(&self) -> f64 {
        let total = self.replicates_used + self.failures;
        if total == 0 {
            0.0
        } else {
            self.failures as f64 / total as f64
        }
    }

    /// Average of one metric over areas.
    pub fn mean_of(&self, f: impl Fn(&AreaMetrics) -> f64) -> f64 {
        self.areas.iter().map(f).sum::<f64>() / self.areas.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scenario: SimScenario,
    pub methods: Vec<MethodMetrics>,
    /// Largest `|Ȳ_i − θ_i|` over areas and replicates.
    pub max_ybar_theta_gap: f64,
}

impl SimReport {
    pub fn method(&self, name: &str) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.method == name)
    }
}

struct ReplicateResult {
    theta: Vec<f64>,
    gap: f64,
    outputs: Vec<std::result::Result<Prediction, String>>,
}

fn run_replicate(
    scenario: &SimScenario,
    x: &Arc<Vec<f64>>,
    predictors: &[&dyn Predictor],
    r: usize,
) -> Result<ReplicateResult> {
    let stream = scenario.replicate_stream(r);
    let pop = generate_population(scenario, x, &mut stream.child(0))?;
    let data = draw_srs(&pop, scenario.sample_size, &mut stream.child(1))?;
    let gap = pop
        .ybar
        .iter()
        .zip(&pop.theta)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let outputs = predictors
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let mut rng = stream.child(2 + k as u64);
            p.predict(&data, &mut rng, &pop.theta)
                .and_then(|pred| {
                    if pred.estimate.len() != scenario.m || pred.estimate.iter().any(|e| !e.is_finite()) {
                        Err(SaeError::NonConvergence(format!("{} returned invalid estimates", p.name())))
                    } else {
                        Ok(pred)
                    }
                })
                .map_err(|e| e.to_string())
        })
        .collect();
    Ok(ReplicateResult {
        theta: pop.theta,
        gap,
        outputs,
    })
}

fn aggregate(name: &str, m: usize, results: &[ReplicateResult], k: usize) -> MethodMetrics {
    let mut sums = vec![[0.0f64; 7]; m];
    let mut used = 0usize;
    let mut failure_messages = Vec::new();
    let mut failures = 0usize;
    for rep in results {
        match &rep.outputs[k] {
            Ok(pred) => {
                used += 1;
                for i in 0..m {
                    let err = pred.estimate[i] - rep.theta[i];
                    let t = rep.theta[i];
                    let (l90, u90) = pred.ci90[i];
                    let (l95, u95) = pred.ci95[i];
                    let s = &mut sums[i];
                    s[0] += err;
                    s[1] += err * err;
                    s[2] += pred.uncertainty[i];
                    s[3] += f64::from(u8::from(l90 <= t && t <= u90));
                    s[4] += f64::from(u8::from(l95 <= t && t <= u95));
                    s[5] += u90 - l90;
                    s[6] += u95 - l95;
                }
            }
            Err(msg) => {
                failures += 1;
                if failure_messages.len() < 5 {
                    failure_messages.push(msg.clone());
                }
            }
        }
    }
    let denom = used.max(1) as f64;
    let areas = sums
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let e_m = s[1] / denom;
            let mean_unc = s[2] / denom;
            AreaMetrics {
                area_id: i as u32 + 1,
                e_b: s[0] / denom,
                e_m,
                re: if e_m > 0.0 { (mean_unc - e_m) / e_m } else { 0.0 },
                coverage90: s[3] / denom,
                coverage95: s[4] / denom,
                len90: s[5] / denom,
                len95: s[6] / denom,
            }
        })
        .collect();
    MethodMetrics {
        method: name.to_string(),
        replicates_used: used,
        failures,
        failure_messages,
        areas,
    }
}

/// Runs every replicate in parallel and reduces the results in replicate
/// order.
pub fn run_study(scenario: &SimScenario, predictors: &[&dyn Predictor]) -> Result<SimReport> {
    scenario.validate()?;
    if predictors.is_empty() {
        return Err(SaeError::invalid("no methods selected"));
    }
    let x = generate_covariates(scenario);
    let results = (0..scenario.replicates)
        .into_par_iter()
        .map(|r| run_replicate(scenario, &x, predictors, r))
        .collect::<Result<Vec<_>>>()?;
    let methods = predictors
        .iter()
        .enumerate()
        .map(|(k, p)| aggregate(p.name(), scenario.m, &results, k))
        .collect();
    Ok(SimReport {
        scenario: scenario.clone(),
        methods,
        max_ybar_theta_gap: results.iter().map(|r| r.gap).fold(0.0, f64::max),
    })
}

/// Tidy `area,method,metric,value` rows.
pub fn write_metrics_csv<W: Write>(report: &SimReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["area", "method", "metric", "value"])?;
    for m in &report.methods {
        for a in &m.areas {
            for (name, value) in AreaMetrics::NAMES.iter().zip(a.values()) {
                w.write_record([a.area_id.to_string(), m.method.clone(), name.to_string(), format!("{value:.10e}")])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_report(report: &SimReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_metrics_csv(report, std::fs::File::create(dir.join("metrics.csv"))?)?;
    let summary = serde_json::json!({
        "scenario": report.scenario,
        "max_ybar_theta_gap": report.max_ybar_theta_gap,
        "methods": report.methods.iter().map(|m| serde_json::json!({
            "method": m.method,
            "replicates_used": m.replicates_used,
            "failures": m.failures,
            "failure_messages": m.failure_messages,
            "mean_eB": m.mean_of(|a| a.e_b),
            "mean_eM": m.mean_of(|a| a.e_m),
            "mean_RE": m.mean_of(|a| a.re),
            "mean_coverage90": m.mean_of(|a| a.coverage90),
            "mean_coverage95": m.mean_of(|a| a.coverage95),
            "mean_len90": m.mean_of(|a| a.len90),
            "mean_len95": m.mean_of(|a| a.len95),
        })).collect::<Vec<_>>(),
    });
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Truth;

    impl Predictor for Truth {
        fn name(&self) -> &str {
            "truth"
        }
        fn predict(&self, _: &SurveyDataset, _: &mut RngStream, truth: &[f64]) -> Result<Prediction> {
            Ok(Prediction::symmetric(truth.to_vec(), vec![0.0; truth.len()]))
        }
    }

    /// Deliberately noisy: θ plus seeded noise with a fixed interval width.
    struct Noisy;

    impl Predictor for Noisy {
        fn name(&self) -> &str {
            "noisy"
        }
        fn predict(&self, _: &SurveyDataset, rng: &mut RngStream, truth: &[f64]) -> Result<Prediction> {
            let est = truth.iter().map(|t| t + rng.standard_normal()).collect();
            Ok(Prediction::symmetric(est, vec![0.8; truth.len()]))
        }
    }

    struct Failing;

    impl Predictor for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn predict(&self, _: &SurveyDataset, _: &mut RngStream, _: &[f64]) -> Result<Prediction> {
            Err(SaeError::NonConvergence("nope".into()))
        }
    }

    fn small(law: ErrorLaw, s: usize) -> SimScenario {
        SimScenario {
            m: 6,
            population_size: 50,
            sample_size: 3,
            ..SimScenario::standard(law, s, 11)
        }
    }

    #[test]
    fn normal_population_moments() {
        let sc = SimScenario::standard(ErrorLaw::Normal, 1, 3);
        let x = generate_covariates(&sc);
        let mut total = 0.0;
        let reps = 20;
        for r in 0..reps {
            let pop = generate_population(&sc, &x, &mut RngStream::new(9, r)).unwrap();
            total += pop.y.iter().sum::<f64>() / pop.y.len() as f64;
        }
        // x mean is itself random with sd 1/sqrt(8000)
        let xm = x.iter().sum::<f64>() / x.len() as f64;
        let mean = total / reps as f64;
        assert!((mean - (1.0 + xm)).abs() < 0.2, "{mean}");
        assert!((xm - 1.0).abs() < 0.05);
    }

    #[test]
    fn mixture_error_variance() {
        let mut rng = RngStream::new(4, 0);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| ErrorLaw::Mixture.draw(&mut rng).unwrap()).collect();
        let var = crate::diagnostics::variance(&draws);
        assert!((var - 3.4).abs() < 0.05 * 3.4, "{var}");
    }

    #[test]
    fn covariates_are_fixed_across_replicates() {
        let sc = small(ErrorLaw::Normal, 2);
        let a = generate_covariates(&sc);
        let b = generate_covariates(&sc);
        let p1 = generate_population(&sc, &a, &mut sc.replicate_stream(0)).unwrap();
        let p2 = generate_population(&sc, &b, &mut sc.replicate_stream(1)).unwrap();
        let bytes = |v: &[f64]| v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>();
        assert_eq!(bytes(&p1.x), bytes(&p2.x));
        assert_ne!(p1.y, p2.y);
    }

    #[test]
    fn srs_contracts() {
        let sc = small(ErrorLaw::Normal, 1);
        let x = generate_covariates(&sc);
        let pop = generate_population(&sc, &x, &mut RngStream::new(1, 0)).unwrap();
        let full = draw_srs(&pop, 50, &mut RngStream::new(2, 0)).unwrap();
        assert_eq!(full.n(), 6 * 50);
        let ys: Vec<f64> = full.response().iter().copied().collect();
        let mut sorted_pop = pop.y.clone();
        let mut sorted_s = ys;
        sorted_pop.sort_by(f64::total_cmp);
        sorted_s.sort_by(f64::total_cmp);
        assert_eq!(sorted_pop, sorted_s);

        let d = draw_srs(&pop, 3, &mut RngStream::new(3, 0)).unwrap();
        for i in 0..d.m() {
            let xs: Vec<f64> = d.members(i).iter().map(|&j| d.records()[j].x[1]).collect();
            let mut dedup = xs.clone();
            dedup.sort_by(f64::total_cmp);
            dedup.dedup();
            assert_eq!(dedup.len(), xs.len());
        }
    }

    #[test]
    fn inclusion_probability() {
        let sc = SimScenario {
            m: 1,
            ..SimScenario::standard(ErrorLaw::Normal, 1, 5)
        };
        let x = generate_covariates(&sc);
        let pop = generate_population(&sc, &x, &mut RngStream::new(1, 0)).unwrap();
        let target = pop.x[0];
        let root = RngStream::new(77, 0);
        let hits = (0..10_000u64)
            .filter(|&k| {
                let d = draw_srs(&pop, 4, &mut root.child(k)).unwrap();
                d.records().iter().any(|r| r.x[1] == target)
            })
            .count();
        let freq = hits as f64 / 10_000.0;
        assert!((freq - 0.02).abs() < 0.005, "{freq}");
    }

    #[test]
    fn oracle_estimator_metrics() {
        let sc = small(ErrorLaw::Mixture, 5);
        let report = run_study(&sc, &[&Truth]).unwrap();
        let m = &report.methods[0];
        assert_eq!(m.replicates_used, 5);
        for a in &m.areas {
            assert_eq!((a.e_b, a.e_m, a.coverage90, a.coverage95), (0.0, 0.0, 1.0, 1.0));
        }
    }

    #[test]
    fn coverage_matches_recount_and_metric_identities() {
        let sc = small(ErrorLaw::T4, 7);
        let report = run_study(&sc, &[&Noisy]).unwrap();
        // recount by replaying each replicate's stream
        let x = generate_covariates(&sc);
        let mut covered = vec![0usize; sc.m];
        for r in 0..sc.replicates {
            let stream = sc.replicate_stream(r);
            let pop = generate_population(&sc, &x, &mut stream.child(0)).unwrap();
            let data = draw_srs(&pop, sc.sample_size, &mut stream.child(1)).unwrap();
            let pred = Noisy.predict(&data, &mut stream.child(2), &pop.theta).unwrap();
            for i in 0..sc.m {
                let (lo, hi) = pred.ci90[i];
                if lo <= pop.theta[i] && pop.theta[i] <= hi {
                    covered[i] += 1;
                }
            }
        }
        for (a, c) in report.methods[0].areas.iter().zip(&covered) {
            assert_eq!(a.coverage90, *c as f64 / 7.0);
            assert!(a.e_m >= a.e_b * a.e_b - 1e-12);
            assert!((a.len90 - 2.0 * Z90 * 0.8f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn failures_are_counted_and_excluded() {
        let sc = small(ErrorLaw::Normal, 3);
        let report = run_study(&sc, &[&Truth, &Failing]).unwrap();
        let f = report.method("failing").unwrap();
        assert_eq!((f.failures, f.replicates_used), (3, 0));
        assert_eq!(f.failure_rate(), 1.0);
        assert_eq!(report.method("truth").unwrap().failures, 0);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let sc = small(ErrorLaw::Mixture, 4);
        let cfg = StudyConfig {
            hb: GibbsConfig {
                iterations: 300,
                burn_in: 100,
                ..StudyConfig::default().hb
            },
            bootstrap: 10,
            ..StudyConfig::default()
        };
        let methods: Vec<String> = ["dg", "nm", "sr", "mq"].iter().map(|s| s.to_string()).collect();
        let preds = standard_predictors(&methods, &cfg).unwrap();
        let refs: Vec<&dyn Predictor> = preds.iter().map(|p| p.as_ref()).collect();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = one.install(|| run_study(&sc, &refs)).unwrap();
        let b = run_study(&sc, &refs).unwrap();
        assert_eq!(a, b);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        write_metrics_csv(&a, &mut buf_a).unwrap();
        write_metrics_csv(&b, &mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
        assert_eq!(String::from_utf8(buf_a).unwrap().lines().count(), 1 + 4 * 6 * 7);
    }

    #[test]
    fn unknown_names_rejected() {
        assert!(ErrorLaw::parse("cauchy").is_err());
        assert!(standard_predictors(&["xx".to_string()], &StudyConfig::default()).is_err());
        assert!(SimScenario {
            sample_size: 500,
            ..SimScenario::standard(ErrorLaw::Normal, 1, 1)
        }
        .validate()
        .is_err());
    }
}
