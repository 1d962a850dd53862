use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "sae", version, about = "Robust small area estimation under the nested error model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one predictor to a survey sample.
    Fit(FitArgs),
    /// Run the design-based simulation study.
    Simulate(SimulateArgs),
    /// Merge outputs of earlier runs into one table.
    Report(ReportArgs),
}

impl Command {
    pub fn jobs(&self) -> Option<usize> {
        match self {
            Command::Fit(a) => a.jobs,
            Command::Simulate(a) => a.jobs,
            Command::Report(_) => None,
        }
    }

    pub fn out_dir(&self) -> Option<&Path> {
        match self {
            Command::Fit(a) => Some(&a.out),
            Command::Simulate(a) => Some(&a.out),
            Command::Report(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DgHb,
    NmHb,
    Reblup,
    Mq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictandArg {
    Theta,
    Ybar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MqEstimatorArg {
    BiasAdjusted,
    Plain,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    /// Unit CSV: area_id,unit_id,y,x1,...
    #[arg(long)]
    pub units: PathBuf,
    /// Area CSV: area_id,N,xbar1,...
    #[arg(long)]
    pub areas: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON object whose keys mirror the long flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overridden by SAE_SEED when set.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value_t = 25_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 5_000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, value_enum, default_value_t = PredictandArg::Theta)]
    pub predictand: PredictandArg,
    /// Non-sampled covariate rows (area_id,x1,...), needed for ybar.
    #[arg(long)]
    pub unsampled: Option<PathBuf>,
    /// Write per-chain traces under OUT/draws.
    #[arg(long)]
    pub save_draws: bool,
    /// Huber tuning constant.
    #[arg(long, default_value_t = sae_core::reblup::DEFAULT_C)]
    pub c: f64,
    /// Parametric bootstrap replicates for the REBLUP MSE.
    #[arg(long, default_value_t = 200)]
    pub bootstrap: usize,
    #[arg(long, value_enum, default_value_t = MqEstimatorArg::BiasAdjusted)]
    pub mq_estimator: MqEstimatorArg,
    /// Do not fail when R-hat exceeds the gate.
    #[arg(long)]
    pub allow_unconverged: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct SimulateArgs {
    /// none, mixture or t4.
    #[arg(long)]
    pub scenario: String,
    #[arg(long = "S", default_value_t = 50)]
    pub replicates: usize,
    /// Use 100 replicates.
    #[arg(long)]
    pub full: bool,
    #[arg(long, value_delimiter = ',', default_value = "dg,nm,sr,mq")]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value_t = 6_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1_000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 2)]
    pub chains: usize,
    #[arg(long, default_value_t = 100)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = sae_core::reblup::DEFAULT_C)]
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    /// Output directories of earlier fit or simulate runs.
    #[arg(long = "in", num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
