//! CSV ingestion and emission for outcome/regressor datasets.
//!
//! Layout: header `t,y,<exposures...>,<covariates...>`; `t` holds consecutive
//! integers; a missing outcome is an empty field.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::design::{NamedSeries, TimeSeriesDataset};
use crate::error::{Error, Result};

/// Shortest representation that round-trips through `f64::from_str`.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}

pub fn format_optional(v: Option<f64>) -> String {
    v.map(format_value).unwrap_or_default()
}

/// Parse a dataset. Columns named in `exposures` are exposures; every other
/// column after `t,y` is a covariate. An empty `exposures` slice takes the
/// first regressor column as the exposure.
pub fn read_dataset<R: Read>(reader: R, exposures: &[String]) -> Result<TimeSeriesDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 2 || header[0] != "t" || header[1] != "y" {
        return Err(Error::Config(format!("row 1: header must start with t,y; got {header:?}")));
    }
    let regressors = &header[2..];
    for name in exposures {
        if !regressors.contains(name) {
            return Err(Error::Config(format!("row 1: exposure column {name:?} not found")));
        }
    }
    let is_exposure = |i: usize, name: &str| {
        if exposures.is_empty() {
            i == 0
        } else {
            exposures.iter().any(|e| e == name)
        }
    };

    let mut y = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); regressors.len()];
    let mut expected_t: Option<i64> = None;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Config(format!("row {row}: expected {} fields, found {}", header.len(), rec.len())));
        }
        let t: i64 = rec[0]
            .parse()
            .map_err(|_| Error::Config(format!("row {row}, column t: {:?} is not an integer", &rec[0])))?;
        if let Some(e) = expected_t {
            if t != e {
                return Err(Error::Config(format!("row {row}, column t: expected {e}, found {t}; insert missing rows explicitly")));
            }
        }
        expected_t = Some(t + 1);
        y.push(if rec[1].is_empty() { None } else { Some(parse_number(&rec[1], row, "y")?) });
        for (j, name) in regressors.iter().enumerate() {
            let field = &rec[j + 2];
            if field.is_empty() {
                return Err(Error::Config(format!("row {row}, column {name}: regressors may not be missing")));
            }
            columns[j].push(parse_number(field, row, name)?);
        }
    }
    if y.is_empty() {
        return Err(Error::Config("data file has no rows".into()));
    }

    let mut exp = Vec::new();
    let mut cov = Vec::new();
    for (j, (name, values)) in regressors.iter().zip(columns).enumerate() {
        let s = NamedSeries::new(name.clone(), values);
        if is_exposure(j, name) {
            exp.push(s);
        } else {
            cov.push(s);
        }
    }
    // Order exposures as listed by the caller.
    if !exposures.is_empty() {
        exp.sort_by_key(|s| exposures.iter().position(|e| *e == s.name));
    }
    TimeSeriesDataset::new(y, exp, cov).map_err(|e| match e {
        Error::Contract(msg) => Error::Config(msg),
        other => other,
    })
}

pub fn read_dataset_path(path: &Path, exposures: &[String]) -> Result<TimeSeriesDataset> {
    read_dataset(File::open(path)?, exposures)
}

fn parse_number(field: &str, row: usize, column: &str) -> Result<f64> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Config(format!("row {row}, column {column}: {field:?} is not a finite number"))),
    }
}

/// Write a dataset, optionally replacing the outcome column.
pub fn write_dataset<W: Write>(writer: W, ds: &TimeSeriesDataset, outcome: Option<&[f64]>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let mut header = vec!["t".to_string(), "y".to_string()];
    header.extend(ds.exposures().iter().chain(ds.covariates()).map(|s| s.name.clone()));
    w.write_record(&header)?;
    for t in 0..ds.len() {
        let mut rec = vec![(t + 1).to_string()];
        rec.push(match outcome {
            Some(y) => format_value(y[t]),
            None => format_optional(ds.y()[t]),
        });
        rec.extend(ds.exposures().iter().chain(ds.covariates()).map(|s| format_value(s.values[t])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset_path(path: &Path, ds: &TimeSeriesDataset, outcome: Option<&[f64]>) -> Result<()> {
    write_dataset(File::create(path)?, ds, outcome)
}
