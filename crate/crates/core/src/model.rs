//! Domain types for unit-level survey data under the nested error
//! regression model
//!
//! ```text
//! y_ij = x_ijᵀβ + v_i + e_ij
//! ```
//!
//! plus the predictand arithmetic shared by all estimators. The intercept is
//! never stored in files: the loader synthesizes `x[0] = 1` for every unit
//! and every area mean.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, SaeError};

pub const UNITS_SCHEMA: &str = "sae-units v1";
pub const AREAS_SCHEMA: &str = "sae-areas v1";
pub const UNSAMPLED_SCHEMA: &str = "sae-unsampled v1";

/// One sampled unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub area_id: u32,
    pub unit_id: u32,
    pub y: f64,
    /// Covariates including the leading intercept entry.
    pub x: Vec<f64>,
}

/// Area-level population facts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaInfo {
    pub area_id: u32,
    /// Population size `N_i`.
    pub population: usize,
    /// Sample size `n_i`, counted from the unit records.
    pub sampled: usize,
    /// Population covariate mean `X̄_i`, including the intercept entry.
    pub xbar: Vec<f64>,
}

/// A validated survey sample. Area ids are `1..=m` in order, so the area
/// index of id `k` is `k - 1`.
#[derive(Debug, Clone)]
pub struct SurveyDataset {
    records: Vec<UnitRecord>,
    areas: Vec<AreaInfo>,
    p: usize,
    area_of: Vec<usize>,
    members: Vec<Vec<usize>>,
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl SurveyDataset {
    /// Validates and indexes a dataset. `AreaInfo::sampled` is recomputed
    /// from the records; every problem found is reported in one error.
    pub fn new(records: Vec<UnitRecord>, mut areas: Vec<AreaInfo>) -> Result<Self> {
        let mut problems = Vec::new();
        if areas.is_empty() {
            problems.push("dataset has no areas".to_string());
        }
        let p = areas
            .first()
            .map(|a| a.xbar.len())
            .or_else(|| records.first().map(|r| r.x.len()))
            .unwrap_or(0);
        if p == 0 {
            problems.push("covariate dimension is zero".to_string());
        }
        for (k, a) in areas.iter().enumerate() {
            if a.area_id as usize != k + 1 {
                problems.push(format!(
                    "area ids must be 1..=m in order; position {} holds id {}",
                    k + 1,
                    a.area_id
                ));
            }
            if a.xbar.len() != p {
                problems.push(format!(
                    "area {}: xbar has {} entries, expected {}",
                    a.area_id,
                    a.xbar.len(),
                    p
                ));
            }
            if a.xbar.iter().any(|v| !v.is_finite()) {
                problems.push(format!("area {}: non-finite xbar", a.area_id));
            }
            if a.population == 0 {
                problems.push(format!("area {}: population size is zero", a.area_id));
            }
        }

        let m = areas.len();
        let mut area_of = Vec::with_capacity(records.len());
        let mut members = vec![Vec::new(); m];
        for (j, r) in records.iter().enumerate() {
            if r.x.len() != p {
                problems.push(format!(
                    "unit ({}, {}): {} covariates, expected {}",
                    r.area_id,
                    r.unit_id,
                    r.x.len(),
                    p
                ));
            }
            if !r.y.is_finite() || r.x.iter().any(|v| !v.is_finite()) {
                problems.push(format!("unit ({}, {}): non-finite value", r.area_id, r.unit_id));
            }
            let idx = r.area_id as usize;
            if idx == 0 || idx > m {
                problems.push(format!(
                    "unit ({}, {}): area {} not present in area table",
                    r.area_id, r.unit_id, r.area_id
                ));
                area_of.push(usize::MAX);
            } else {
                area_of.push(idx - 1);
                members[idx - 1].push(j);
            }
        }
        for (a, mem) in areas.iter_mut().zip(&members) {
            a.sampled = mem.len();
            if a.sampled > a.population {
                problems.push(format!(
                    "area {}: {} sampled units exceed population size {}",
                    a.area_id, a.sampled, a.population
                ));
            }
        }
        if !problems.is_empty() {
            return Err(SaeError::Validation(problems));
        }

        let n = records.len();
        let x = DMatrix::from_fn(n, p, |j, k| records[j].x[k]);
        let y = DVector::from_iterator(n, records.iter().map(|r| r.y));
        Ok(SurveyDataset {
            records,
            areas,
            p,
            area_of,
            members,
            x,
            y,
        })
    }

    pub fn records(&self) -> &[UnitRecord] {
        &self.records
    }

    pub fn areas(&self) -> &[AreaInfo] {
        &self.areas
    }

    /// Covariate dimension including the intercept.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn m(&self) -> usize {
        self.areas.len()
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    /// Area index (0-based) of unit `j`.
    #[inline]
    pub fn area_of(&self, j: usize) -> usize {
        self.area_of[j]
    }

    pub fn area_index(&self) -> &[usize] {
        &self.area_of
    }

    /// Unit indices belonging to area `i`.
    pub fn members(&self, i: usize) -> &[usize] {
        &self.members[i]
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.y
    }

    /// Area means of the sampled responses (`NaN` for empty areas).
    pub fn sample_means(&self) -> Vec<f64> {
        self.members
            .iter()
            .map(|mem| mem.iter().map(|&j| self.y[j]).sum::<f64>() / mem.len() as f64)
            .collect()
    }

    /// Area means of the sampled covariates (`NaN` entries for empty areas).
    pub fn sample_xbar(&self, i: usize) -> Vec<f64> {
        let mem = &self.members[i];
        (0..self.p)
            .map(|k| mem.iter().map(|&j| self.x[(j, k)]).sum::<f64>() / mem.len() as f64)
            .collect()
    }

    /// Same design and areas with a new response vector.
    pub fn with_responses(&self, y: &[f64]) -> Result<SurveyDataset> {
        check_dim("response vector", self.n(), y.len())?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SaeError::validation("non-finite response"));
        }
        let mut out = self.clone();
        for (r, &v) in out.records.iter_mut().zip(y) {
            r.y = v;
        }
        out.y = DVector::from_column_slice(y);
        Ok(out)
    }

    /// Removes the given (area_id, unit_id) unit.
    pub fn without_unit(&self, area_id: u32, unit_id: u32) -> Result<SurveyDataset> {
        let records: Vec<_> = self
            .records
            .iter()
            .filter(|r| !(r.area_id == area_id && r.unit_id == unit_id))
            .cloned()
            .collect();
        if records.len() == self.records.len() {
            return Err(SaeError::validation(format!(
                "unit ({area_id}, {unit_id}) not found"
            )));
        }
        SurveyDataset::new(records, self.areas.clone())
    }

    /// `n > p`, needed by every regression-based estimator.
    pub fn require_dof(&self) -> Result<()> {
        if self.n() <= self.p {
            return Err(SaeError::validation(format!(
                "insufficient degrees of freedom: n = {} must exceed p = {}",
                self.n(),
                self.p
            )));
        }
        Ok(())
    }
}

/// Covariate rows of the non-sampled units of each area, used when the
/// finite-population mean `Ȳ_i` is the predictand.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UnsampledCovariates {
    pub areas: Vec<Vec<Vec<f64>>>,
}

impl UnsampledCovariates {
    pub fn check(&self, data: &SurveyDataset) -> Result<()> {
        check_dim("unsampled areas", data.m(), self.areas.len())?;
        for (a, rows) in data.areas().iter().zip(&self.areas) {
            check_dim("unsampled units", a.population - a.sampled, rows.len())?;
            for r in rows {
                check_dim("unsampled covariates", data.p(), r.len())?;
            }
        }
        Ok(())
    }
}

/// Area-level predictands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictandSet {
    pub theta: Vec<f64>,
    pub ybar: Option<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `r_ij = y_ij − x_ijᵀβ − v_i`.
pub fn residual(record: &UnitRecord, beta: &[f64], v: &[f64]) -> Result<f64> {
    check_dim("beta", record.x.len(), beta.len())?;
    let i = record.area_id as usize;
    if i == 0 || i > v.len() {
        return Err(SaeError::Dimension {
            what: "random effects",
            expected: i,
            got: v.len(),
        });
    }
    Ok(record.y - dot(&record.x, beta) - v[i - 1])
}

/// `θ_i = X̄_iᵀβ + v_i`.
pub fn theta(area: &AreaInfo, beta: &[f64], v_i: f64) -> Result<f64> {
    check_dim("beta", area.xbar.len(), beta.len())?;
    Ok(dot(&area.xbar, beta) + v_i)
}

/// `Ȳ_i = N_i⁻¹ (Σ_sampled y + Σ_unsampled Y)`.
pub fn compose_area_mean(area: &AreaInfo, sampled_sum: f64, unsampled_draws: &[f64]) -> Result<f64> {
    check_dim(
        "unsampled draws",
        area.population - area.sampled,
        unsampled_draws.len(),
    )?;
    Ok((sampled_sum + unsampled_draws.iter().sum::<f64>()) / area.population as f64)
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input)
}

/// Checks the `# <schema>` comment row when one is present.
fn check_schema(text: &str, expected: &str) -> Result<()> {
    if let Some(first) = text.lines().next() {
        if let Some(tag) = first.strip_prefix('#') {
            let tag = tag.trim();
            if tag.starts_with("sae-") && tag != expected {
                return Err(SaeError::validation(format!(
                    "schema mismatch: file declares '{tag}', expected '{expected}'"
                )));
            }
        }
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(
    s: &str,
    what: &str,
    line: usize,
    problems: &mut Vec<String>,
) -> Option<T> {
    match s.parse::<T>() {
        Ok(v) => Some(v),
        Err(_) => {
            problems.push(format!("line {line}: non-numeric {what} '{s}'"));
            None
        }
    }
}

/// Parses unit and area CSV text into a validated dataset.
pub fn read_dataset(units_csv: &str, areas_csv: &str) -> Result<SurveyDataset> {
    check_schema(units_csv, UNITS_SCHEMA)?;
    check_schema(areas_csv, AREAS_SCHEMA)?;
    let mut problems = Vec::new();

    let mut rdr = csv_reader(areas_csv.as_bytes());
    let header = rdr.headers()?.clone();
    if header.len() < 2 || &header[0] != "area_id" || &header[1] != "N" {
        problems.push("area csv header must start with area_id,N".to_string());
    }
    let mut areas = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            problems.push(format!(
                "area csv line {line}: {} fields, header has {}",
                rec.len(),
                header.len()
            ));
            continue;
        }
        let id = parse_field::<u32>(&rec[0], "area_id", line, &mut problems);
        let pop = parse_field::<usize>(&rec[1], "N", line, &mut problems);
        let mut xbar = vec![1.0];
        for f in rec.iter().skip(2) {
            if let Some(v) = parse_field::<f64>(f, "xbar", line, &mut problems) {
                xbar.push(v);
            }
        }
        if let (Some(area_id), Some(population)) = (id, pop) {
            areas.push(AreaInfo {
                area_id,
                population,
                sampled: 0,
                xbar,
            });
        }
    }
    areas.sort_by_key(|a| a.area_id);

    let mut rdr = csv_reader(units_csv.as_bytes());
    let header = rdr.headers()?.clone();
    if header.len() < 3 || &header[0] != "area_id" || &header[1] != "unit_id" || &header[2] != "y"
    {
        problems.push("unit csv header must start with area_id,unit_id,y".to_string());
    }
    let mut records = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            problems.push(format!(
                "unit csv line {line}: {} fields, header has {}",
                rec.len(),
                header.len()
            ));
            continue;
        }
        let area_id = parse_field::<u32>(&rec[0], "area_id", line, &mut problems);
        let unit_id = parse_field::<u32>(&rec[1], "unit_id", line, &mut problems);
        let y = parse_field::<f64>(&rec[2], "y", line, &mut problems);
        let mut x = vec![1.0];
        for f in rec.iter().skip(3) {
            if let Some(v) = parse_field::<f64>(f, "covariate", line, &mut problems) {
                x.push(v);
            }
        }
        if let (Some(area_id), Some(unit_id), Some(y)) = (area_id, unit_id, y) {
            records.push(UnitRecord {
                area_id,
                unit_id,
                y,
                x,
            });
        }
    }
    if !problems.is_empty() {
        return Err(SaeError::Validation(problems));
    }
    SurveyDataset::new(records, areas)
}

/// Loads a dataset from a unit CSV (`area_id,unit_id,y,x1,...`) and an area
/// CSV (`area_id,N,xbar1,...`).
pub fn load_dataset(unit_csv: impl AsRef<Path>, area_csv: impl AsRef<Path>) -> Result<SurveyDataset> {
    let mut units = String::new();
    File::open(unit_csv.as_ref())?.read_to_string(&mut units)?;
    let mut areas = String::new();
    File::open(area_csv.as_ref())?.read_to_string(&mut areas)?;
    read_dataset(&units, &areas)
}

/// Writes both CSV files. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_dataset<W1: Write, W2: Write>(
    data: &SurveyDataset,
    mut units: W1,
    mut areas: W2,
) -> Result<()> {
    let q = data.p().saturating_sub(1);
    writeln!(units, "# {UNITS_SCHEMA}")?;
    let mut header = String::from("area_id,unit_id,y");
    for k in 1..=q {
        header.push_str(&format!(",x{k}"));
    }
    writeln!(units, "{header}")?;
    for r in data.records() {
        let mut line = format!("{},{},{}", r.area_id, r.unit_id, r.y);
        for v in &r.x[1..] {
            line.push_str(&format!(",{v}"));
        }
        writeln!(units, "{line}")?;
    }

    writeln!(areas, "# {AREAS_SCHEMA}")?;
    let mut header = String::from("area_id,N");
    for k in 1..=q {
        header.push_str(&format!(",xbar{k}"));
    }
    writeln!(areas, "{header}")?;
    for a in data.areas() {
        let mut line = format!("{},{}", a.area_id, a.population);
        for v in &a.xbar[1..] {
            line.push_str(&format!(",{v}"));
        }
        writeln!(areas, "{line}")?;
    }
    Ok(())
}

/// Parses non-sampled covariate rows (`area_id,x1,...`) for `data`.
pub fn read_unsampled(csv_text: &str, data: &SurveyDataset) -> Result<UnsampledCovariates> {
    check_schema(csv_text, UNSAMPLED_SCHEMA)?;
    let mut problems = Vec::new();
    let mut out = UnsampledCovariates {
        areas: vec![Vec::new(); data.m()],
    };
    let mut rdr = csv_reader(csv_text.as_bytes());
    let header = rdr.headers()?.clone();
    if header.is_empty() || &header[0] != "area_id" {
        problems.push("unsampled csv header must start with area_id".to_string());
    }
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec?;
        let id = parse_field::<u32>(&rec[0], "area_id", line, &mut problems);
        let mut x = vec![1.0];
        for f in rec.iter().skip(1) {
            if let Some(v) = parse_field::<f64>(f, "covariate", line, &mut problems) {
                x.push(v);
            }
        }
        match id {
            Some(i) if i >= 1 && (i as usize) <= data.m() => out.areas[i as usize - 1].push(x),
            Some(i) => problems.push(format!("unsampled csv line {line}: unknown area {i}")),
            None => {}
        }
    }
    if !problems.is_empty() {
        return Err(SaeError::Validation(problems));
    }
    out.check(data)?;
    Ok(out)
}

pub fn save_dataset(
    data: &SurveyDataset,
    unit_csv: impl AsRef<Path>,
    area_csv: impl AsRef<Path>,
) -> Result<()> {
    let units = std::io::BufWriter::new(File::create(unit_csv)?);
    let areas = std::io::BufWriter::new(File::create(area_csv)?);
    write_dataset(data, units, areas)
}
