//! Outcome missingness: seeded MCAR / MAR / MNAR masks and summaries of how
//! outcome gaps propagate into lagged regressors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::{derive_lag_missingness, ModelSpec, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

const MAX_BISECTION_STEPS: usize = 50;
const RATE_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Mcar,
    Mar,
    Mnar,
}

impl Mechanism {
    pub fn label(self) -> &'static str {
        match self {
            Mechanism::Mcar => "mcar",
            Mechanism::Mar => "mar",
            Mechanism::Mnar => "mnar",
        }
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

fn default_slope() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismSpec {
    pub kind: Mechanism,
    pub target_rate: f64,
    /// Series driving MAR missingness; defaults to the first covariate.
    #[serde(default)]
    pub drivers: Vec<String>,
    /// Logistic slope on the standardized driver.
    #[serde(default = "default_slope")]
    pub slope: f64,
    #[serde(default)]
    pub seed: u64,
}

impl MechanismSpec {
    pub fn new(kind: Mechanism, target_rate: f64, seed: u64) -> Self {
        Self { kind, target_rate, drivers: Vec::new(), slope: 1.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_rate > 0.0 && self.target_rate < 1.0) {
            return Err(Error::Config(format!("target_rate must lie in (0, 1), got {}", self.target_rate)));
        }
        if !self.slope.is_finite() {
            return Err(Error::Config("slope must be finite".into()));
        }
        Ok(())
    }
}

/// Mask outcomes of a fully observed dataset. The returned dataset carries the
/// original outcome as its truth.
pub fn apply_mechanism(ds: &TimeSeriesDataset, ms: &MechanismSpec) -> Result<TimeSeriesDataset> {
    ms.validate()?;
    let full: Vec<f64> = ds
        .y()
        .iter()
        .enumerate()
        .map(|(t, v)| v.ok_or_else(|| Error::Contract(format!("outcome already missing at t={}", t + 1))))
        .collect::<Result<_>>()?;
    let mut rng = rng_from_seed(ms.seed);
    let u: Vec<f64> = (0..full.len()).map(|_| rng.random::<f64>()).collect();

    let mask: Vec<bool> = match ms.kind {
        Mechanism::Mcar => u.iter().map(|&ui| ui < ms.target_rate).collect(),
        Mechanism::Mar => {
            let driver = mar_driver(ds, &ms.drivers)?;
            calibrate(&u, &driver, ms.slope, ms.target_rate)?
        }
        Mechanism::Mnar => calibrate(&u, &standardize(&full), ms.slope, ms.target_rate)?,
    };
    let y = full.iter().zip(&mask).map(|(v, m)| if *m { None } else { Some(*v) }).collect();
    ds.with_outcome(y)?.with_truth(full)
}

fn mar_driver(ds: &TimeSeriesDataset, names: &[String]) -> Result<Vec<f64>> {
    let selected: Vec<&[f64]> = if names.is_empty() {
        let s = ds
            .covariates()
            .first()
            .or_else(|| ds.exposures().first())
            .ok_or_else(|| Error::Config("MAR needs a fully observed driver series".into()))?;
        vec![&s.values]
    } else {
        names
            .iter()
            .map(|n| {
                ds.series(n)
                    .map(|s| s.values.as_slice())
                    .ok_or_else(|| Error::Config(format!("MAR driver {n:?} not in dataset")))
            })
            .collect::<Result<_>>()?
    };
    let standardized: Vec<Vec<f64>> = selected.iter().map(|s| standardize(s)).collect();
    let combined: Vec<f64> = (0..ds.len()).map(|t| standardized.iter().map(|s| s[t]).sum::<f64>()).collect();
    Ok(standardize(&combined))
}

fn standardize(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    if sd > 0.0 {
        xs.iter().map(|x| (x - mean) / sd).collect()
    } else {
        vec![0.0; xs.len()]
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Bisect the logistic intercept until the realized rate is within tolerance.
/// The uniforms are fixed, so the realized rate is monotone in the intercept.
fn calibrate(u: &[f64], z: &[f64], slope: f64, target: f64) -> Result<Vec<bool>> {
    let mask_at = |alpha: f64| -> Vec<bool> { u.iter().zip(z).map(|(ui, zi)| *ui < logistic(alpha + slope * zi)).collect() };
    let rate = |m: &[bool]| m.iter().filter(|b| **b).count() as f64 / m.len() as f64;
    let (mut lo, mut hi) = (-40.0, 40.0);
    let mut achieved = f64::NAN;
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let m = mask_at(mid);
        achieved = rate(&m);
        if (achieved - target).abs() <= RATE_TOLERANCE {
            return Ok(m);
        }
        if achieved < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Calibration { achieved, target })
}

/// How outcome gaps inflate regressor missingness under a declaration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissingnessReport {
    pub length: usize,
    pub outcome_missing_rate: f64,
    /// `(lag, fraction of rows t > lag whose lagged outcome is missing)`.
    pub lag_missing_rates: Vec<(usize, f64)>,
    /// Fraction of rows with the outcome and every lagged outcome observed.
    pub complete_row_rate: f64,
    pub incomplete_rows: usize,
}

pub fn missingness_report(ds: &TimeSeriesDataset, spec: &ModelSpec) -> MissingnessReport {
    let n = ds.len();
    let mask = ds.mask();
    let lags: Vec<usize> = (1..=spec.outcome_lags).collect();
    let lag_missing = derive_lag_missingness(&mask, &lags);
    let lag_missing_rates = lags
        .iter()
        .map(|&j| {
            let eligible = n.saturating_sub(j);
            let count = lag_missing.iter().filter(|l| l.contains(&j)).count();
            (j, if eligible > 0 { count as f64 / eligible as f64 } else { 0.0 })
        })
        .collect();
    let incomplete_rows = (0..n).filter(|&t| mask[t] || !lag_missing[t].is_empty()).count();
    let frac = |k: usize| if n > 0 { k as f64 / n as f64 } else { 0.0 };
    MissingnessReport {
        length: n,
        outcome_missing_rate: ds.missing_rate(),
        lag_missing_rates,
        complete_row_rate: 1.0 - frac(incomplete_rows),
        incomplete_rows,
    }
}
