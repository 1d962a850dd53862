use std::ffi::OsString;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use sae_core::hb::{
    run_chain, standardized_residuals, summarize, write_traces, GibbsConfig, HbModel, Predictand,
    RHAT_GATE,
};
use sae_core::mquantile::{fit_mq_areas, MqEstimator, MqOptions};
use sae_core::reblup::{bootstrap_mse, fit_reblup, HuberPsi, ReblupOptions};
use sae_core::{load_dataset, read_unsampled, RngStream, SurveyDataset};
use serde_json::json;

use crate::args::{FitArgs, Method, MqEstimatorArg, PredictandArg};
use crate::manifest::{self, RunManifest};
use crate::{CliError, CliResult};

pub const ESTIMATES_SCHEMA: &str = "sae-estimates v1";

/// One row of estimates.csv.
pub struct EstimateRow {
    pub area_id: u32,
    pub estimate: f64,
    pub sd: f64,
    pub ci90: (f64, f64),
    pub ci95: (f64, f64),
}

fn symmetric_rows(data: &SurveyDataset, estimate: &[f64], mse: &[f64]) -> Vec<EstimateRow> {
    let pred = sae_core::evalsim::Prediction::symmetric(estimate.to_vec(), mse.to_vec());
    data.areas()
        .iter()
        .enumerate()
        .map(|(i, a)| EstimateRow {
            area_id: a.area_id,
            estimate: pred.estimate[i],
            sd: pred.uncertainty[i].sqrt(),
            ci90: pred.ci90[i],
            ci95: pred.ci95[i],
        })
        .collect()
}

pub fn write_estimates(path: &Path, rows: &[EstimateRow]) -> CliResult<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "# {ESTIMATES_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["area", "estimate", "sd_or_rmse", "ci90_lo", "ci90_hi", "ci95_lo", "ci95_hi"])?;
    for r in rows {
        let mut rec = vec![r.area_id.to_string()];
        rec.extend([r.estimate, r.sd, r.ci90.0, r.ci90.1, r.ci95.0, r.ci95.1].iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

struct FitOutput {
    rows: Vec<EstimateRow>,
    params: serde_json::Value,
    failure: Option<CliError>,
}

fn fit_hb(args: &FitArgs, data: &SurveyDataset, seed: u64, out: &Path) -> CliResult<FitOutput> {
    let model = if args.method == Method::DgHb { HbModel::Dg } else { HbModel::Nm };
    let config = GibbsConfig {
        iterations: args.iterations,
        burn_in: args.burn_in,
        thin: args.thin,
        chains: args.chains,
        seed,
        predictand: match args.predictand {
            PredictandArg::Theta => Predictand::Theta,
            PredictandArg::Ybar => Predictand::Ybar,
        },
    };
    let unsampled = match &args.unsampled {
        Some(p) => Some(read_unsampled(&std::fs::read_to_string(p)?, data)?),
        None => None,
    };
    let draws = run_chain(model, data, &config, unsampled.as_ref())?;
    if args.save_draws {
        write_traces(&draws, &out.join("draws"))?;
    }
    let summary = summarize(&draws, &[0.90, 0.95])?;
    let rows = summary
        .areas
        .iter()
        .map(|a| {
            let iv = |l: f64| a.interval(l).map(|i| (i.lower, i.upper)).unwrap_or((f64::NAN, f64::NAN));
            EstimateRow {
                area_id: a.area_id,
                estimate: a.mean,
                sd: a.sd,
                ci90: iv(0.90),
                ci95: iv(0.95),
            }
        })
        .collect();
    if model == HbModel::Nm {
        let resid = standardized_residuals(data, &summary)?;
        let mut w = csv::Writer::from_path(out.join("outliers.csv"))?;
        w.write_record(["area_id", "unit_id", "standardized_residual", "posterior_outlier_prob"])?;
        for (u, r) in summary.outlier_prob.iter().zip(&resid) {
            w.write_record([u.area_id.to_string(), u.unit_id.to_string(), r.to_string(), u.probability.to_string()])?;
        }
        w.flush()?;
    }
    let max_rhat = summary.max_rhat();
    let (structural, effects): (Vec<_>, Vec<_>) =
        summary.parameters.iter().partition(|p| sae_core::hb::is_gated(&p.name));
    let params = json!({
        "schema": "sae-params v1",
        "method": args.method,
        "predictand": summary.predictand,
        "draws": summary.draws,
        "max_rhat": max_rhat,
        "rhat_gate": RHAT_GATE,
        "parameters": structural,
        "random_effects": effects,
    });
    let failure = (!summary.converged(RHAT_GATE) && !args.allow_unconverged).then(|| {
        CliError::convergence(format!("max split R-hat {max_rhat:.4} is not below {RHAT_GATE}"))
    });
    Ok(FitOutput { rows, params, failure })
}

fn fit_sr(args: &FitArgs, data: &SurveyDataset, seed: u64) -> CliResult<FitOutput> {
    let psi = HuberPsi::new(args.c)?;
    let options = ReblupOptions::default();
    let fit = fit_reblup(data, psi, options)?;
    if !fit.converged {
        return Err(CliError::convergence(format!(
            "REBLUP stopped after {} iterations (relative change {:.3e})",
            fit.iterations_used, fit.final_residual_norm
        )));
    }
    let boot = bootstrap_mse(&fit, data, args.bootstrap, options, &RngStream::new(seed, 0))?;
    let params = json!({
        "schema": "sae-params v1",
        "method": args.method,
        "c": args.c,
        "beta": fit.beta,
        "sigma_v2": fit.delta.sigma_v2,
        "sigma_e2": fit.delta.sigma_e2,
        "random_effects": fit.v,
        "iterations": fit.iterations_used,
        "converged": fit.converged,
        "final_residual_norm": fit.final_residual_norm,
        "bootstrap": { "replicates": boot.replicates, "failed": boot.failed },
    });
    Ok(FitOutput {
        rows: symmetric_rows(data, &fit.theta, &boot.mse),
        params,
        failure: None,
    })
}

fn fit_mq(args: &FitArgs, data: &SurveyDataset) -> CliResult<FitOutput> {
    let options = MqOptions {
        estimator: match args.mq_estimator {
            MqEstimatorArg::BiasAdjusted => MqEstimator::BiasAdjusted,
            MqEstimatorArg::Plain => MqEstimator::Plain,
        },
        ..MqOptions::default()
    };
    let (grid, fit) = fit_mq_areas(data, HuberPsi::new(args.c)?, options)?;
    let params = json!({
        "schema": "sae-params v1",
        "method": args.method,
        "c": args.c,
        "estimator": options.estimator,
        "grid": grid.q_grid,
        "area_qbar": fit.area_qbar,
        "area_beta": fit.area_beta,
        "unit_q": fit.unit_q,
    });
    Ok(FitOutput {
        rows: symmetric_rows(data, &fit.estimates, &fit.mse),
        params,
        failure: None,
    })
}

pub fn run(args: &FitArgs, argv: &[OsString]) -> CliResult<()> {
    let start = Instant::now();
    let seed = manifest::resolve_seed(args.seed)?;
    let data = load_dataset(&args.units, &args.areas)?;
    if args.predictand == PredictandArg::Ybar && !matches!(args.method, Method::DgHb | Method::NmHb) {
        return Err(CliError::validation("--predictand ybar is only available for dg-hb and nm-hb"));
    }
    std::fs::create_dir_all(&args.out)?;
    let out = &args.out;
    let result = match args.method {
        Method::DgHb | Method::NmHb => fit_hb(args, &data, seed, out)?,
        Method::Reblup => fit_sr(args, &data, seed)?,
        Method::Mq => fit_mq(args, &data)?,
    };
    write_estimates(&out.join("estimates.csv"), &result.rows)?;
    std::fs::write(out.join("params.json"), serde_json::to_string_pretty(&result.params)? + "\n")?;
    let mut inputs = vec![manifest::digest(&args.units)?, manifest::digest(&args.areas)?];
    if let Some(p) = &args.unsampled {
        inputs.push(manifest::digest(p)?);
    }
    let mut config = args.clone();
    config.seed = seed;
    manifest::write(
        out,
        &RunManifest {
            schema: manifest::MANIFEST_SCHEMA,
            command: "fit",
            argv: manifest::argv_strings(argv),
            config,
            seed,
            versions: manifest::versions(),
            threads: rayon::current_num_threads(),
            timings: manifest::timings(start.elapsed()),
            inputs,
        },
    )?;

    println!("{:>6} {:>12} {:>10} {:>12} {:>12}", "area", "estimate", "sd", "ci90_lo", "ci90_hi");
    for r in &result.rows {
        println!(
            "{:>6} {:>12.3} {:>10.3} {:>12.3} {:>12.3}",
            r.area_id, r.estimate, r.sd, r.ci90.0, r.ci90.1
        );
    }
    match result.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
