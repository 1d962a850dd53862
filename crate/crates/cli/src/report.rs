//! Merges `fit` outputs side by side (one estimate and SD column pair per
//! input) or stacks `simulate` metrics with a source column.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::args::{Format, ReportArgs};
use crate::fit::ESTIMATES_SCHEMA;
use crate::manifest::MANIFEST_SCHEMA;
use crate::{CliError, CliResult};

struct Input {
    label: String,
    dir: PathBuf,
    command: String,
}

fn read_input(dir: &Path) -> CliResult<Input> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))
        .map_err(|e| CliError::validation(format!("{}: no readable manifest.json ({e})", dir.display())))?;
    let manifest: Value = serde_json::from_str(&text)?;
    let schema = manifest["schema"].as_str().unwrap_or("");
    if schema != MANIFEST_SCHEMA {
        return Err(CliError::validation(format!(
            "{}: schema mismatch, manifest declares {schema:?}, expected {MANIFEST_SCHEMA:?}",
            dir.display()
        )));
    }
    let label = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(Input {
        label,
        dir: dir.to_path_buf(),
        command: manifest["command"].as_str().unwrap_or("").to_string(),
    })
}

fn read_estimates(dir: &Path) -> CliResult<(String, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(dir.join("estimates.csv"))?;
    let first = text.lines().next().unwrap_or("");
    let declared = first.strip_prefix('#').map(str::trim).unwrap_or("");
    if declared != ESTIMATES_SCHEMA {
        return Err(CliError::validation(format!(
            "{}: schema mismatch, estimates.csv declares {declared:?}, expected {ESTIMATES_SCHEMA:?}",
            dir.display()
        )));
    }
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()?;
    Ok((text, rows))
}

fn emit(args: &ReportArgs, body: &[u8]) -> CliResult<()> {
    match &args.out {
        Some(p) => std::fs::write(p, body)?,
        None => std::io::stdout().write_all(body)?,
    }
    Ok(())
}

fn to_csv(header: &[String], rows: &[Vec<String>]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| CliError::from(std::io::Error::other(e.to_string())))
}

fn to_json(header: &[String], rows: &[Vec<String>]) -> CliResult<Vec<u8>> {
    let records: Vec<Value> = rows
        .iter()
        .map(|r| {
            let obj: serde_json::Map<String, Value> = header
                .iter()
                .zip(r)
                .map(|(k, v)| {
                    let val = v.parse::<f64>().ok().and_then(serde_json::Number::from_f64).map(Value::Number);
                    (k.clone(), val.unwrap_or_else(|| Value::String(v.clone())))
                })
                .collect();
            Value::Object(obj)
        })
        .collect();
    Ok((serde_json::to_string_pretty(&json!(records))? + "\n").into_bytes())
}

fn render(args: &ReportArgs, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let body = match args.format {
        Format::Csv => to_csv(header, rows)?,
        Format::Json => to_json(header, rows)?,
    };
    emit(args, &body)
}

fn merge_fits(args: &ReportArgs, inputs: &[Input]) -> CliResult<()> {
    if let [only] = inputs {
        let (text, rows) = read_estimates(&only.dir)?;
        return match args.format {
            Format::Csv => emit(args, text.as_bytes()),
            Format::Json => {
                let header = ["area", "estimate", "sd_or_rmse", "ci90_lo", "ci90_hi", "ci95_lo", "ci95_hi"].map(String::from);
                render(args, &header, &rows)
            }
        };
    }
    let mut header = vec!["area".to_string()];
    let mut table: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    for (k, input) in inputs.iter().enumerate() {
        let (_, rows) = read_estimates(&input.dir)?;
        header.push(format!("{}_estimate", input.label));
        header.push(format!("{}_sd", input.label));
        for r in rows {
            let area: u32 = r[0]
                .parse()
                .map_err(|_| CliError::validation(format!("{}: bad area id {:?}", input.dir.display(), r[0])))?;
            let entry = table.entry(area).or_insert_with(|| vec![String::new(); 2 * inputs.len()]);
            entry[2 * k] = r[1].clone();
            entry[2 * k + 1] = r[2].clone();
        }
    }
    let rows: Vec<Vec<String>> = table
        .into_iter()
        .map(|(area, vals)| std::iter::once(area.to_string()).chain(vals).collect())
        .collect();
    render(args, &header, &rows)
}

fn stack_metrics(args: &ReportArgs, inputs: &[Input]) -> CliResult<()> {
    let mut header = vec!["source".to_string()];
    let mut rows = Vec::new();
    for input in inputs {
        let mut rdr = csv::Reader::from_path(input.dir.join("metrics.csv"))?;
        if header.len() == 1 {
            header.extend(rdr.headers()?.iter().map(str::to_string));
        }
        for r in rdr.records() {
            let r = r?;
            rows.push(std::iter::once(input.label.clone()).chain(r.iter().map(str::to_string)).collect());
        }
    }
    render(args, &header, &rows)
}

pub fn run(args: &ReportArgs) -> CliResult<()> {
    let inputs = args.inputs.iter().map(|d| read_input(d)).collect::<CliResult<Vec<_>>>()?;
    let command = inputs[0].command.clone();
    if inputs.iter().any(|i| i.command != command) {
        return Err(CliError::validation("cannot merge fit and simulate outputs in one report"));
    }
    match command.as_str() {
        "fit" => merge_fits(args, &inputs),
        "simulate" => stack_metrics(args, &inputs),
        other => Err(CliError::validation(format!("unknown run type {other:?} in manifest"))),
    }
}
