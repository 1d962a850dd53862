use std::ffi::OsString;
use std::time::Instant;

use sae_core::evalsim::{run_study, save_report, standard_predictors, ErrorLaw, Predictor, SimScenario, StudyConfig};
use sae_core::hb::GibbsConfig;

use crate::args::SimulateArgs;
use crate::manifest::{self, RunManifest};
use crate::{CliError, CliResult};

fn canonical_method(name: &str) -> CliResult<String> {
    Ok(match name.trim() {
        "dg" | "dg-hb" => "dg",
        "nm" | "nm-hb" => "nm",
        "sr" | "reblup" => "sr",
        "mq" => "mq",
        other => {
            return Err(CliError::validation(format!(
                "unknown method {other:?} (expected dg, nm, sr or mq)"
            )))
        }
    }
    .to_string())
}

pub fn run(args: &SimulateArgs, argv: &[OsString]) -> CliResult<()> {
    let start = Instant::now();
    let seed = manifest::resolve_seed(args.seed)?;
    let law = ErrorLaw::parse(&args.scenario)?;
    let replicates = if args.full { 100 } else { args.replicates };
    let scenario = SimScenario::standard(law, replicates, seed);
    let methods = args
        .methods
        .iter()
        .map(|m| canonical_method(m))
        .collect::<CliResult<Vec<_>>>()?;
    let config = StudyConfig {
        hb: GibbsConfig {
            iterations: args.iterations,
            burn_in: args.burn_in,
            chains: args.chains,
            ..StudyConfig::default().hb
        },
        bootstrap: args.bootstrap,
        c: args.c,
    };
    config.hb.validate()?;
    let predictors = standard_predictors(&methods, &config)?;
    let refs: Vec<&dyn Predictor> = predictors.iter().map(|p| p.as_ref()).collect();
    let report = run_study(&scenario, &refs)?;
    save_report(&report, &args.out)?;

    let mut resolved = args.clone();
    resolved.seed = seed;
    resolved.replicates = replicates;
    manifest::write(
        &args.out,
        &RunManifest {
            schema: manifest::MANIFEST_SCHEMA,
            command: "simulate",
            argv: manifest::argv_strings(argv),
            config: serde_json::json!({ "args": resolved, "scenario": scenario, "study": config }),
            seed,
            versions: manifest::versions(),
            threads: rayon::current_num_threads(),
            timings: manifest::timings(start.elapsed()),
            inputs: Vec::new(),
        },
    )?;

    println!(
        "scenario {} S={} max|Ybar-theta|={:.4}",
        args.scenario, replicates, report.max_ybar_theta_gap
    );
    println!(
        "{:>6} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>6}",
        "method", "eB", "eM", "RE", "cov90", "cov95", "len90", "fail"
    );
    for m in &report.methods {
        println!(
            "{:>6} {:>8.4} {:>8.4} {:>8.4} {:>8.3} {:>8.3} {:>8.4} {:>6}",
            m.method,
            m.mean_of(|a| a.e_b),
            m.mean_of(|a| a.e_m),
            m.mean_of(|a| a.re),
            m.mean_of(|a| a.coverage90),
            m.mean_of(|a| a.coverage95),
            m.mean_of(|a| a.len90),
            m.failures
        );
    }
    if let Some(m) = report.methods.iter().find(|m| m.failure_rate() > 0.1) {
        return Err(CliError::convergence(format!(
            "{} failed in {} of {} replicates: {}",
            m.method,
            m.failures,
            m.failures + m.replicates_used,
            m.failure_messages.first().map(String::as_str).unwrap_or("")
        )));
    }
    Ok(())
}
