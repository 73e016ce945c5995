use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use ssmimpute::design::{build_design, ModelSpec, TimeSeriesDataset};
use ssmimpute::imputers::{fit_model, run_method, Method};
use ssmimpute::io::{read_dataset_path, write_dataset};
use ssmimpute::missingness::{apply_mechanism, missingness_report};
use ssmimpute::simulation::{generate_scenario, run_grid, write_detections_csv, write_raw_csv, GridResult, RawEstimate};
use ssmimpute::structure::one_step_prediction_score;
use ssmimpute::{Error, Result};

use crate::config::{default_grid, full_scale, RunConfig};
use crate::output::{csv_writer, file_digest, write_change_points, write_paths, write_pooled, write_trace, Metadata, OutDir};
use crate::svg::boxplot;

/// Settings shared by every subcommand after flags are merged into the config.
pub struct Invocation {
    pub config: RunConfig,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub method: Option<Method>,
    pub full_scale: bool,
}

impl Invocation {
    fn out_dir(&self, command: &'static str, data: Option<&Path>) -> Result<OutDir> {
        let mut meta = Metadata::new(command, self.config.digest(), self.config.seed);
        meta.data_sha256 = data.map(file_digest).transpose()?;
        meta.method = self.method.map(|m| m.label().to_string());
        OutDir::create(&self.out, meta, data)
    }

    fn data_path(&self) -> Result<&Path> {
        self.data.as_deref().ok_or_else(|| Error::Config("--data is required for this command".into()))
    }

    fn model(&self) -> Result<&ModelSpec> {
        self.config.model.as_ref().ok_or_else(|| Error::Config("config needs a `model` block".into()))
    }

    fn dataset(&self) -> Result<(TimeSeriesDataset, &Path)> {
        let path = self.data_path()?;
        Ok((read_dataset_path(path, &self.config.exposures)?, path))
    }
}

pub fn simulate(inv: &Invocation) -> Result<()> {
    let sc = inv.config.scenario.as_ref().ok_or_else(|| Error::Config("simulate needs a `scenario` block".into()))?;
    let (ds, truth) = generate_scenario(sc)?;
    let out = inv.out_dir("simulate", None)?;
    out.csv("data.csv", |w| write_dataset(w, &ds, None))?;
    out.csv("truth.csv", |w| truth.write_csv(w))?;
    info!("simulated {} rows of {}", ds.len(), sc.label());
    Ok(())
}

pub fn mask(inv: &Invocation) -> Result<()> {
    let ms = inv.config.mechanism.as_ref().ok_or_else(|| Error::Config("mask needs a `mechanism` block".into()))?;
    let (ds, path) = inv.dataset()?;
    if ds.observed_count() != ds.len() {
        return Err(Error::Config("mask expects a fully observed outcome".into()));
    }
    let masked = apply_mechanism(&ds, ms)?;
    let out = inv.out_dir("mask", Some(path))?;
    out.csv("masked.csv", |w| write_dataset(w, &masked, None))?;
    let spec = inv.config.model.clone().unwrap_or_else(|| ModelSpec::new(1, 0, 0));
    out.json("missingness.json", &missingness_report(&masked, &spec))?;
    Ok(())
}

#[derive(Serialize)]
struct ImputeSummary {
    method: Method,
    converged: bool,
    loglik: f64,
    iterations: usize,
    completed_series: usize,
    change_points: BTreeMap<String, Vec<usize>>,
    params: BTreeMap<String, f64>,
}

pub fn impute(inv: &Invocation) -> Result<()> {
    let method = inv
        .method
        .or(inv.config.method)
        .ok_or_else(|| Error::Config("--method is required for impute".into()))?;
    let (ds, path) = inv.dataset()?;
    let spec = inv.model()?;
    let res = run_method(method, &ds, spec, &inv.config.imputation)?;
    if !res.converged {
        warn!("{method} stopped at the iteration cap without converging; results are still written");
    }
    let out = inv.out_dir("impute", Some(path))?;
    for (k, y) in res.completed_outcomes.iter().enumerate() {
        out.csv(&format!("completed_{}.csv", k + 1), |w| write_dataset(w, &ds, Some(y)))?;
    }
    out.csv("estimates.csv", |w| write_pooled(w, &res.pooled))?;
    out.csv("trace.csv", |w| write_trace(w, &res.trace, res.converged))?;
    out.csv("change_points.csv", |w| write_change_points(w, &res.change_points))?;
    if let Some(times) = &res.original_times {
        out.csv("time_map.csv", |w| {
            let mut w = csv_writer(w);
            w.write_record(["spliced_t", "original_t"])?;
            for (i, o) in times.iter().enumerate() {
                w.write_record([(i + 1).to_string(), (o + 1).to_string()])?;
            }
            w.flush()?;
            Ok(())
        })?;
    }
    out.json(
        "summary.json",
        &ImputeSummary {
            method,
            converged: res.converged,
            loglik: res.loglik,
            iterations: res.trace.len(),
            completed_series: res.completed_outcomes.len(),
            change_points: res.change_points.clone(),
            params: res.params.names().iter().cloned().zip(res.params.values()).collect(),
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct FitSummary {
    loglik: f64,
    one_step_score: f64,
    converged: bool,
    change_points: BTreeMap<String, Vec<usize>>,
    params: BTreeMap<String, f64>,
}

pub fn fit(inv: &Invocation) -> Result<()> {
    let (ds, path) = inv.dataset()?;
    if ds.observed_count() != ds.len() {
        return Err(Error::Config(
            "fit needs a fully observed outcome; use `impute --method cc` for complete-case analysis".into(),
        ));
    }
    let mut specs: Vec<&ModelSpec> = inv.config.model.iter().collect();
    specs.extend(&inv.config.candidates);
    if specs.is_empty() {
        return Err(Error::Config("config needs a `model` block or `candidates`".into()));
    }
    let mut fits = Vec::with_capacity(specs.len());
    for spec in &specs {
        let dm = build_design(&ds, spec, None)?;
        let fit = fit_model(spec, &dm, &[], &inv.config.imputation.fit)?;
        let score = one_step_prediction_score(&fit.state_space, dm.response())?;
        fits.push((fit, score));
    }
    // Stable sort keeps declaration order among tied scores.
    let mut order: Vec<usize> = (0..fits.len()).collect();
    order.sort_by(|&a, &b| fits[a].1.total_cmp(&fits[b].1));
    let (best, score) = &fits[order[0]];

    let out = inv.out_dir("fit", Some(path))?;
    out.csv("estimates.csv", |w| write_paths(w, &best.paths()))?;
    out.csv("ranking.csv", |w| {
        let mut w = csv_writer(w);
        w.write_record(["rank", "candidate", "one_step_score", "loglik", "converged"])?;
        for (rank, &i) in order.iter().enumerate() {
            let (f, s) = &fits[i];
            w.write_record([
                (rank + 1).to_string(),
                i.to_string(),
                ssmimpute::io::format_value(*s),
                ssmimpute::io::format_value(f.loglik),
                f.converged.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    out.json(
        "fit.json",
        &FitSummary {
            loglik: best.loglik,
            one_step_score: *score,
            converged: best.converged,
            change_points: best.change_points(),
            params: best.params.names().iter().cloned().zip(best.params.values()).collect(),
        },
    )?;
    Ok(())
}

pub fn evaluate(inv: &Invocation) -> Result<()> {
    let seed = inv.config.seed.unwrap_or(0);
    let mut grid = inv.config.grid.clone().unwrap_or_else(|| default_grid(seed));
    if inv.full_scale {
        grid = full_scale(grid);
    }
    grid.validate()?;
    info!("running {} replications", grid.reps);
    let res = run_grid(&grid)?;
    let out = inv.out_dir("evaluate", None)?;
    out.csv("metrics.csv", |w| res.table.write_csv(w))?;
    out.csv("change_points.csv", |w| res.table.write_change_points_csv(w))?;
    out.csv("raw.csv", |w| write_raw_csv(&res.raw, w))?;
    out.csv("detections.csv", |w| write_detections_csv(&res.detections, w))?;
    out.text("failures.log", &failure_log(&res))?;
    for (name, svg) in boxplots(&res) {
        out.text(&name, &svg)?;
    }
    Ok(())
}

/// One line per failed cell, in table order.
fn failure_log(res: &GridResult) -> String {
    let mut seen = std::collections::BTreeSet::new();
    let mut log = String::new();
    for e in &res.raw {
        if let Some(msg) = &e.error {
            let key = (e.scenario.clone(), e.mechanism, e.rate.to_bits(), e.method, e.rep);
            if seen.insert(key) {
                log.push_str(&format!("{}\t{}\t{}\t{}\trep {}\t{}\n", e.scenario, e.mechanism, e.rate, e.method, e.rep, msg));
            }
        }
    }
    log
}

/// Estimation error at the last evaluation time, one plot per coefficient and
/// mechanism with a box per scenario, rate and method.
fn boxplots(res: &GridResult) -> Vec<(String, String)> {
    let mut cells: BTreeMap<(&str, String), Vec<&RawEstimate>> = BTreeMap::new();
    for e in &res.raw {
        cells.entry((e.coefficient, e.mechanism.to_string())).or_default().push(e);
    }
    cells
        .into_iter()
        .map(|((coef, mech), rows)| {
            let mut last: BTreeMap<&str, usize> = BTreeMap::new();
            for e in &rows {
                let t = last.entry(e.scenario.as_str()).or_insert(0);
                *t = (*t).max(e.eval_time);
            }
            let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
            for e in &rows {
                if e.eval_time != last[e.scenario.as_str()] {
                    continue;
                }
                let label = format!("{} {} {}", e.scenario, e.rate, e.method);
                let err = e.estimate.map(|v| v - e.truth);
                match groups.iter_mut().find(|(l, _)| *l == label) {
                    Some((_, v)) => v.extend(err),
                    None => groups.push((label, err.into_iter().collect())),
                }
            }
            let title = format!("{coef}, {mech}: estimate minus truth at the last time");
            (format!("boxplot_{coef}_{mech}.svg"), boxplot(&title, "error", &groups))
        })
        .collect()
}
