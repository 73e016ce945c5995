use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{aggregate, summarize_change_points, MetricsTable};
use super::scenario::{generate_scenario, ScenarioSpec, DESIGN_NAMES, TRUTH_NAMES};
use crate::error::{Error, Result};
use crate::imputers::{run_method, ImputationConfig, Method};
use crate::missingness::{apply_mechanism, Mechanism, MechanismSpec};
use crate::rng::derive_seed;

const DATA_STREAM: u64 = 0x10_0000;
const MASK_STREAM: u64 = 0x20_0000;
const IMPUTE_STREAM: u64 = 0x30_0000;

fn default_window() -> f64 {
    0.05
}
fn default_slope() -> f64 {
    1.0
}

/// A scenario × mechanism × rate × method grid over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub scenarios: Vec<ScenarioSpec>,
    pub mechanisms: Vec<Mechanism>,
    pub rates: Vec<f64>,
    pub methods: Vec<Method>,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub imputation: ImputationConfig,
    /// Logistic slope for MAR and MNAR masks.
    #[serde(default = "default_slope")]
    pub mechanism_slope: f64,
    /// Change-point detection window as a fraction of the series length.
    #[serde(default = "default_window")]
    pub change_point_window: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.scenarios.is_empty() || self.mechanisms.is_empty() || self.rates.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("scenarios, mechanisms, rates and methods must be non-empty".into()));
        }
        let mut labels: Vec<String> = self.scenarios.iter().map(ScenarioSpec::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("scenario labels must be distinct; set `name` to tell them apart".into()));
        }
        for sc in &self.scenarios {
            sc.validate()?;
        }
        for &rate in &self.rates {
            MechanismSpec::new(Mechanism::Mcar, rate, 0).validate()?;
        }
        if !(self.change_point_window > 0.0 && self.change_point_window < 1.0) {
            return Err(Error::Config("change_point_window must lie in (0, 1)".into()));
        }
        self.imputation.validate()
    }
}

/// One coefficient estimate from one replication, or the reason it is missing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RawEstimate {
    pub scenario: String,
    pub mechanism: Mechanism,
    pub rate: f64,
    pub method: Method,
    pub rep: usize,
    pub coefficient: &'static str,
    /// 1-based evaluation time.
    pub eval_time: usize,
    pub truth: f64,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub covered: Option<bool>,
    pub error: Option<String>,
}

/// Change points learned for the exposure effect in one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionRecord {
    pub scenario: String,
    pub mechanism: Mechanism,
    pub rate: f64,
    pub method: Method,
    pub rep: usize,
    pub length: usize,
    pub truth: Vec<usize>,
    pub detected: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub table: MetricsTable,
    pub raw: Vec<RawEstimate>,
    pub detections: Vec<DetectionRecord>,
}

/// Whether `truth` lies in `[lower, upper]`.
pub fn coverage(truth: f64, lower: f64, upper: f64) -> Result<bool> {
    if !(lower <= upper) {
        return Err(Error::Contract(format!("interval lower {lower} exceeds upper {upper}")));
    }
    Ok(lower <= truth && truth <= upper)
}

/// Fraction of covering intervals; `None` for no replications.
pub fn coverage_rate(hits: &[bool]) -> Option<f64> {
    (!hits.is_empty()).then(|| hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64)
}

/// Seed for replication `k`.
pub fn replication_seed(seed: u64, k: usize) -> u64 {
    seed ^ k as u64
}

struct Job {
    scenario: usize,
    rep: usize,
}

/// Run every cell of the grid. Datasets are shared across mechanisms, rates
/// and methods within a replication; masks are shared across methods.
pub fn run_grid(grid: &GridSpec) -> Result<GridResult> {
    grid.validate()?;
    let jobs: Vec<Job> = (0..grid.scenarios.len())
        .flat_map(|scenario| (0..grid.reps).map(move |rep| Job { scenario, rep }))
        .collect();
    let per_job: Vec<(Vec<RawEstimate>, Vec<DetectionRecord>)> = jobs.par_iter().map(|job| run_job(grid, job)).collect();
    let (mut raw, mut detections): (Vec<_>, Vec<_>) = (Vec::new(), Vec::new());
    for (r, d) in per_job {
        raw.extend(r);
        detections.extend(d);
    }
    let order = |s: &str, m: Mechanism, rate: f64, method: Method| {
        let si = grid.scenarios.iter().position(|sc| sc.label() == s).unwrap_or(usize::MAX);
        let mi = grid.mechanisms.iter().position(|x| *x == m).unwrap_or(usize::MAX);
        let ri = grid.rates.iter().position(|x| *x == rate).unwrap_or(usize::MAX);
        let ki = grid.methods.iter().position(|x| *x == method).unwrap_or(usize::MAX);
        (si, mi, ri, ki)
    };
    raw.sort_by_key(|e| {
        let c = TRUTH_NAMES.iter().position(|n| *n == e.coefficient).unwrap_or(usize::MAX);
        (order(&e.scenario, e.mechanism, e.rate, e.method), c, e.eval_time, e.rep)
    });
    detections.sort_by_key(|d| (order(&d.scenario, d.mechanism, d.rate, d.method), d.rep));
    let table = MetricsTable {
        rows: aggregate(&raw),
        change_points: summarize_change_points(&detections, grid.change_point_window),
    };
    Ok(GridResult { table, raw, detections })
}

fn run_job(grid: &GridSpec, job: &Job) -> (Vec<RawEstimate>, Vec<DetectionRecord>) {
    let base = replication_seed(grid.seed, job.rep);
    let sc = ScenarioSpec { seed: derive_seed(base, DATA_STREAM + job.scenario as u64), ..grid.scenarios[job.scenario].clone() };
    let label = sc.label();
    let spec = sc.model_spec();
    let eval = sc.evaluation_times();
    let generated = generate_scenario(&sc);
    let mut raw = Vec::new();
    let mut detections = Vec::new();
    for (mi, &mechanism) in grid.mechanisms.iter().enumerate() {
        for (ri, &rate) in grid.rates.iter().enumerate() {
            let cell = ((job.scenario * grid.mechanisms.len() + mi) * grid.rates.len() + ri) as u64;
            let masked = generated.as_ref().map_err(|e| e.to_string()).and_then(|(full, truth)| {
                let ms = MechanismSpec {
                    slope: grid.mechanism_slope,
                    ..MechanismSpec::new(mechanism, rate, derive_seed(base, MASK_STREAM + cell))
                };
                apply_mechanism(full, &ms).map(|ds| (ds, truth)).map_err(|e| e.to_string())
            });
            let cfg = grid.imputation.clone().with_seed(derive_seed(base, IMPUTE_STREAM + cell));
            for &method in &grid.methods {
                let outcome = masked.clone().and_then(|(ds, truth)| {
                    run_method(method, &ds, &spec, &cfg).map(|res| (res, truth)).map_err(|e| e.to_string())
                });
                if let Err(msg) = &outcome {
                    warn!("{label}/{mechanism}/{rate}/{method} rep {}: {msg}", job.rep);
                } else {
                    debug!("{label}/{mechanism}/{rate}/{method} rep {} done", job.rep);
                }
                for (ci, (coefficient, times)) in eval.iter().enumerate() {
                    for &t in times {
                        let truth = generated.as_ref().map_or(f64::NAN, |(_, tr)| tr.coefficients[ci][t - 1]);
                        let mut est = RawEstimate {
                            scenario: label.clone(),
                            mechanism,
                            rate,
                            method,
                            rep: job.rep,
                            coefficient,
                            eval_time: t,
                            truth,
                            estimate: None,
                            se: None,
                            lower: None,
                            upper: None,
                            covered: None,
                            error: None,
                        };
                        match &outcome {
                            Ok((res, _)) => match res.pooled.get(DESIGN_NAMES[ci], t - 1) {
                                Some(v) if v.mean.is_finite() && v.total.is_finite() => {
                                    let (lo, hi) = v.interval();
                                    est.estimate = Some(v.mean);
                                    est.se = Some(v.se());
                                    est.lower = Some(lo);
                                    est.upper = Some(hi);
                                    est.covered = coverage(truth, lo, hi).ok();
                                }
                                _ => est.error = Some(format!("no finite estimate for {}", DESIGN_NAMES[ci])),
                            },
                            Err(msg) => est.error = Some(msg.clone()),
                        }
                        raw.push(est);
                    }
                }
                if let Ok((_, truth)) = &generated {
                    if !truth.change_points.is_empty() {
                        detections.push(DetectionRecord {
                            scenario: label.clone(),
                            mechanism,
                            rate,
                            method,
                            rep: job.rep,
                            length: sc.length,
                            truth: truth.change_points.clone(),
                            detected: outcome.as_ref().ok().map(|(res, _)| {
                                res.change_points.get(DESIGN_NAMES[2]).cloned().unwrap_or_default()
                            }),
                        });
                    }
                }
            }
        }
    }
    (raw, detections)
}
