use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::grid::{coverage_rate, DetectionRecord, RawEstimate};
use crate::error::Result;
use crate::imputers::Method;
use crate::io::format_value;
use crate::missingness::Mechanism;

/// Aggregate over replications of one method × coefficient × evaluation time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub mechanism: Mechanism,
    pub rate: f64,
    pub method: Method,
    pub coefficient: &'static str,
    pub eval_time: usize,
    pub mean_truth: f64,
    pub mean_est: Option<f64>,
    /// Standard deviation of the estimates; needs two replications.
    pub emp_se: Option<f64>,
    /// Average reported standard error.
    pub mean_se: Option<f64>,
    pub coverage: Option<f64>,
    /// Replications with an estimate.
    pub reps: usize,
    pub failures: usize,
    /// Mean of `estimate − truth`.
    pub bias: Option<f64>,
    /// Monte Carlo standard error of the bias.
    pub bias_mc_se: Option<f64>,
}

/// Detection summary for one true change point in one cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangePointSummary {
    pub scenario: String,
    pub mechanism: Mechanism,
    pub rate: f64,
    pub method: Method,
    pub truth: usize,
    pub reps: usize,
    /// Fraction of replications with a detected point within the window.
    pub hit_rate: Option<f64>,
    /// Fraction of replications where every true point was hit.
    pub joint_hit_rate: Option<f64>,
    /// Mean and spread of the detected point nearest the truth, over
    /// replications with a detection closer to it than to any other truth.
    pub mean_nearest: Option<f64>,
    pub sd_nearest: Option<f64>,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
    pub change_points: Vec<ChangePointSummary>,
}

fn na(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), format_value)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn sample_sd(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    (xs.len() >= 2).then(|| (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

impl MetricsTable {
    pub fn row(
        &self,
        scenario: &str,
        mechanism: Mechanism,
        rate: f64,
        method: Method,
        coefficient: &str,
        eval_time: usize,
    ) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| {
            r.scenario == scenario
                && r.mechanism == mechanism
                && r.rate == rate
                && r.method == method
                && r.coefficient == coefficient
                && r.eval_time == eval_time
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv_writer(writer);
        w.write_record([
            "scenario", "mechanism", "rate", "method", "coefficient", "eval_time", "mean_est", "emp_se", "mean_se", "coverage",
            "reps",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.scenario.clone(),
                r.mechanism.to_string(),
                format_value(r.rate),
                r.method.to_string(),
                r.coefficient.to_string(),
                r.eval_time.to_string(),
                na(r.mean_est),
                na(r.emp_se),
                na(r.mean_se),
                na(r.coverage),
                r.reps.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_change_points_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv_writer(writer);
        w.write_record([
            "scenario", "mechanism", "rate", "method", "truth", "window", "reps", "hit_rate", "joint_hit_rate", "mean_nearest",
            "sd_nearest",
        ])?;
        for c in &self.change_points {
            w.write_record([
                c.scenario.clone(),
                c.mechanism.to_string(),
                format_value(c.rate),
                c.method.to_string(),
                c.truth.to_string(),
                c.window.to_string(),
                c.reps.to_string(),
                na(c.hit_rate),
                na(c.joint_hit_rate),
                na(c.mean_nearest),
                na(c.sd_nearest),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_writer<W: Write>(writer: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer)
}

/// Per-replication estimates, one row each, including failures.
pub fn write_raw_csv<W: Write>(raw: &[RawEstimate], writer: W) -> Result<()> {
    let mut w = csv_writer(writer);
    w.write_record([
        "scenario", "mechanism", "rate", "method", "rep", "coefficient", "eval_time", "truth", "estimate", "se", "lower", "upper",
        "covered", "error",
    ])?;
    for e in raw {
        w.write_record([
            e.scenario.clone(),
            e.mechanism.to_string(),
            format_value(e.rate),
            e.method.to_string(),
            e.rep.to_string(),
            e.coefficient.to_string(),
            e.eval_time.to_string(),
            format_value(e.truth),
            na(e.estimate),
            na(e.se),
            na(e.lower),
            na(e.upper),
            e.covered.map_or("NA".into(), |c| u8::from(c).to_string()),
            e.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-replication detected change points, `;`-separated.
pub fn write_detections_csv<W: Write>(detections: &[DetectionRecord], writer: W) -> Result<()> {
    let mut w = csv_writer(writer);
    w.write_record(["scenario", "mechanism", "rate", "method", "rep", "truth", "detected"])?;
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(";");
    for d in detections {
        w.write_record([
            d.scenario.clone(),
            d.mechanism.to_string(),
            format_value(d.rate),
            d.method.to_string(),
            d.rep.to_string(),
            join(&d.truth),
            d.detected.as_deref().map_or("NA".into(), join),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Group raw estimates by cell, keeping first-appearance order.
fn group<'a, T, K: Ord + Clone>(items: &'a [T], key: impl Fn(&T) -> K) -> Vec<Vec<&'a T>> {
    let mut index: BTreeMap<K, usize> = BTreeMap::new();
    let mut groups: Vec<Vec<&T>> = Vec::new();
    for it in items {
        let slot = *index.entry(key(it)).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(it);
    }
    groups
}

pub(crate) fn aggregate(raw: &[RawEstimate]) -> Vec<MetricsRow> {
    let groups = group(raw, |e| {
        (e.scenario.clone(), e.mechanism, e.rate.to_bits(), e.method, e.coefficient, e.eval_time)
    });
    groups
        .into_iter()
        .map(|g| {
            let first = g[0];
            let ok: Vec<&RawEstimate> = g.iter().copied().filter(|e| e.estimate.is_some()).collect();
            let est: Vec<f64> = ok.iter().filter_map(|e| e.estimate).collect();
            let ses: Vec<f64> = ok.iter().filter_map(|e| e.se).collect();
            let err: Vec<f64> = ok.iter().filter_map(|e| e.estimate.map(|v| v - e.truth)).collect();
            let hits: Vec<bool> = ok.iter().filter_map(|e| e.covered).collect();
            let truths: Vec<f64> = g.iter().map(|e| e.truth).collect();
            MetricsRow {
                scenario: first.scenario.clone(),
                mechanism: first.mechanism,
                rate: first.rate,
                method: first.method,
                coefficient: first.coefficient,
                eval_time: first.eval_time,
                mean_truth: mean(&truths).unwrap_or(f64::NAN),
                mean_est: mean(&est),
                emp_se: sample_sd(&est),
                mean_se: mean(&ses),
                coverage: coverage_rate(&hits),
                reps: ok.len(),
                failures: g.len() - ok.len(),
                bias: mean(&err),
                bias_mc_se: sample_sd(&err).map(|s| s / (err.len() as f64).sqrt()),
            }
        })
        .collect()
}

/// The detected point closest to `truths[i]` among those closer to it than to
/// any other true point.
fn nearest(detected: &[usize], truths: &[usize], i: usize) -> Option<usize> {
    let owner = |d: usize| (0..truths.len()).min_by_key(|&j| (d.abs_diff(truths[j]), j));
    detected.iter().copied().filter(|&d| owner(d) == Some(i)).min_by_key(|&d| (d.abs_diff(truths[i]), d))
}

pub(crate) fn summarize_change_points(detections: &[DetectionRecord], window_fraction: f64) -> Vec<ChangePointSummary> {
    let groups = group(detections, |d| (d.scenario.clone(), d.mechanism, d.rate.to_bits(), d.method));
    let mut out = Vec::new();
    for g in groups {
        let first = g[0];
        let window = (window_fraction * first.length as f64).round() as usize;
        let ok: Vec<&Vec<usize>> = g.iter().filter_map(|d| d.detected.as_ref()).collect();
        let truths = &first.truth;
        let hit = |det: &[usize], i: usize| nearest(det, truths, i).is_some_and(|d| d.abs_diff(truths[i]) <= window);
        let joint: Vec<bool> = ok.iter().map(|det| (0..truths.len()).all(|i| hit(det, i))).collect();
        for (i, &t) in truths.iter().enumerate() {
            let hits: Vec<bool> = ok.iter().map(|det| hit(det, i)).collect();
            let near: Vec<f64> = ok.iter().filter_map(|det| nearest(det, truths, i)).map(|d| d as f64).collect();
            out.push(ChangePointSummary {
                scenario: first.scenario.clone(),
                mechanism: first.mechanism,
                rate: first.rate,
                method: first.method,
                truth: t,
                reps: ok.len(),
                hit_rate: coverage_rate(&hits),
                joint_hit_rate: coverage_rate(&joint),
                mean_nearest: mean(&near),
                sd_nearest: sample_sd(&near),
                window,
            });
        }
    }
    out
}
