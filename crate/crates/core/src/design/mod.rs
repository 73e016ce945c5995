//! Datasets, model declarations and their translation into state space form.
//!
//! Coefficient order is fixed: intercept, outcome lags `1..=q`, each exposure
//! at lags `0..=p`, each covariate at lags `0..=o`.

mod matrix;
mod realize;
mod splice;

pub use matrix::{build_design, derive_lag_missingness, DesignMatrix};
pub use realize::{realize_state_space, StateLayout, CHANGE_POINT_JUMP_FACTOR, OBS_VARIANCE_PARAM};
pub(crate) use realize::realize_with_layout;
pub use splice::{splice_complete_cases, SplicedData};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fully observed regressor series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSeries {
    pub name: String,
    pub values: Vec<f64>,
}

impl NamedSeries {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self { name: name.into(), values }
    }
}

/// Aligned outcome, exposure and covariate series. Only the outcome may be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    y: Vec<Option<f64>>,
    truth: Option<Vec<f64>>,
    exposures: Vec<NamedSeries>,
    covariates: Vec<NamedSeries>,
}

impl TimeSeriesDataset {
    pub fn new(y: Vec<Option<f64>>, exposures: Vec<NamedSeries>, covariates: Vec<NamedSeries>) -> Result<Self> {
        let n = y.len();
        if let Some(t) = y.iter().position(|v| matches!(v, Some(x) if !x.is_finite())) {
            return Err(Error::Contract(format!("outcome at t={} is observed but not finite", t + 1)));
        }
        let mut seen = std::collections::HashSet::new();
        for s in exposures.iter().chain(&covariates) {
            if s.values.len() != n {
                return Err(Error::Contract(format!(
                    "series {} has length {}, outcome has {n}",
                    s.name,
                    s.values.len()
                )));
            }
            if let Some(t) = s.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::Contract(format!("series {} is missing at t={}", s.name, t + 1)));
            }
            if s.name.is_empty() || s.name == "t" || s.name == "y" || !seen.insert(s.name.clone()) {
                return Err(Error::Contract(format!("invalid or duplicate series name {:?}", s.name)));
            }
        }
        Ok(Self { y, truth: None, exposures, covariates })
    }

    /// Attach the full outcome series from which masked values were removed.
    pub fn with_truth(mut self, truth: Vec<f64>) -> Result<Self> {
        if truth.len() != self.y.len() {
            return Err(Error::Contract("truth length differs from outcome length".into()));
        }
        for (t, (obs, full)) in self.y.iter().zip(&truth).enumerate() {
            if let Some(v) = obs {
                if v != full {
                    return Err(Error::Contract(format!("observed outcome at t={} differs from truth", t + 1)));
                }
            }
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y(&self) -> &[Option<f64>] {
        &self.y
    }

    pub fn truth(&self) -> Option<&[f64]> {
        self.truth.as_deref()
    }

    pub fn exposures(&self) -> &[NamedSeries] {
        &self.exposures
    }

    pub fn covariates(&self) -> &[NamedSeries] {
        &self.covariates
    }

    pub fn series(&self, name: &str) -> Option<&NamedSeries> {
        self.exposures.iter().chain(&self.covariates).find(|s| s.name == name)
    }

    /// Missingness indicator `m_t` per time.
    pub fn mask(&self) -> Vec<bool> {
        self.y.iter().map(Option::is_none).collect()
    }

    /// 0-based positions of missing outcomes.
    pub fn missing_times(&self) -> Vec<usize> {
        self.y.iter().enumerate().filter(|(_, v)| v.is_none()).map(|(t, _)| t).collect()
    }

    pub fn observed_count(&self) -> usize {
        self.y.iter().filter(|v| v.is_some()).count()
    }

    pub fn missing_rate(&self) -> f64 {
        if self.y.is_empty() {
            0.0
        } else {
            1.0 - self.observed_count() as f64 / self.y.len() as f64
        }
    }

    /// Same regressors and truth, new outcome vector.
    pub fn with_outcome(&self, y: Vec<Option<f64>>) -> Result<Self> {
        if y.len() != self.y.len() {
            return Err(Error::Contract("replacement outcome has the wrong length".into()));
        }
        Ok(Self { y, truth: self.truth.clone(), exposures: self.exposures.clone(), covariates: self.covariates.clone() })
    }

    /// Copy with the outcome replaced by a completed series. Observed values
    /// must be passed through unchanged.
    pub fn completed(&self, filled: &[f64]) -> Result<Self> {
        if filled.len() != self.y.len() {
            return Err(Error::Contract("completed outcome has the wrong length".into()));
        }
        for (t, (obs, f)) in self.y.iter().zip(filled).enumerate() {
            if let Some(v) = obs {
                if v.to_bits() != f.to_bits() {
                    return Err(Error::Contract(format!("completed series overwrites observed outcome at t={}", t + 1)));
                }
            }
            if !f.is_finite() {
                return Err(Error::Contract(format!("completed outcome at t={} is not finite", t + 1)));
            }
        }
        self.with_outcome(filled.iter().map(|v| Some(*v)).collect())
    }

    /// Rows at the given 0-based positions, in order.
    pub(crate) fn select(&self, rows: &[usize]) -> Self {
        let pick = |v: &[f64]| rows.iter().map(|&t| v[t]).collect::<Vec<_>>();
        Self {
            y: rows.iter().map(|&t| self.y[t]).collect(),
            truth: self.truth.as_deref().map(pick),
            exposures: self.exposures.iter().map(|s| NamedSeries::new(s.name.clone(), pick(&s.values))).collect(),
            covariates: self.covariates.iter().map(|s| NamedSeries::new(s.name.clone(), pick(&s.values))).collect(),
        }
    }
}

/// How a coefficient evolves over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dynamics {
    /// Constant over time: `G = 1`, `W = 0`.
    Invariant,
    /// `β_t = β_{t-1} + w_t`; a missing variance is estimated by maximum likelihood.
    RandomWalk {
        #[serde(default)]
        variance: Option<f64>,
    },
    /// `β_t = μ + x_t` with `x_t` an AR(p') process with coefficients `phi`.
    Ar {
        phi: Vec<f64>,
        #[serde(default)]
        variance: Option<f64>,
    },
    /// Piecewise constant with jumps after each listed time (1-based, last
    /// time of the old regime). `None` means the change points are learned.
    PeriodicStable {
        #[serde(default)]
        change_points: Option<Vec<usize>>,
    },
    /// Start as a random walk and let structure learning decide.
    Learn,
}

impl Dynamics {
    /// Whether the tag can be realized without further learning.
    pub fn is_resolved(&self) -> bool {
        !matches!(self, Dynamics::Learn | Dynamics::PeriodicStable { change_points: None })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Dynamics::Invariant => "invariant",
            Dynamics::RandomWalk { .. } => "random_walk",
            Dynamics::Ar { .. } => "ar",
            Dynamics::PeriodicStable { .. } => "periodic_stable",
            Dynamics::Learn => "learn",
        }
    }
}

/// A regression declaration: lag depths and per-coefficient dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Outcome lag depth `q ≥ 1`.
    pub outcome_lags: usize,
    /// Exposure lag depth `p`.
    #[serde(default)]
    pub exposure_lags: usize,
    /// Covariate lag depth `o`.
    #[serde(default)]
    pub covariate_lags: usize,
    /// Dynamics by coefficient name; unlisted coefficients are invariant.
    #[serde(default)]
    pub dynamics: BTreeMap<String, Dynamics>,
    /// Fixed observation variance; estimated when absent.
    #[serde(default)]
    pub obs_variance: Option<f64>,
    /// Diagonal of the initial state covariance.
    #[serde(default)]
    pub prior_variance: Option<f64>,
}

impl ModelSpec {
    pub fn new(outcome_lags: usize, exposure_lags: usize, covariate_lags: usize) -> Self {
        Self {
            outcome_lags,
            exposure_lags,
            covariate_lags,
            dynamics: BTreeMap::new(),
            obs_variance: None,
            prior_variance: None,
        }
    }

    pub fn with_dynamics(mut self, coefficient: impl Into<String>, dynamics: Dynamics) -> Self {
        self.dynamics.insert(coefficient.into(), dynamics);
        self
    }

    /// Coefficient names in state order for a dataset's regressors.
    pub fn coefficient_names(&self, ds: &TimeSeriesDataset) -> Vec<String> {
        let mut names = vec!["intercept".to_string()];
        names.extend((1..=self.outcome_lags).map(|j| format!("y_lag{j}")));
        for s in ds.exposures() {
            names.extend((0..=self.exposure_lags).map(|k| lagged_name(&s.name, k)));
        }
        for s in ds.covariates() {
            names.extend((0..=self.covariate_lags).map(|k| lagged_name(&s.name, k)));
        }
        names
    }

    /// Rows at the start whose regressors reach before the first observation.
    pub fn burn_in(&self) -> usize {
        self.outcome_lags.max(self.exposure_lags).max(self.covariate_lags)
    }

    pub fn dynamics_of(&self, coefficient: &str) -> &Dynamics {
        self.dynamics.get(coefficient).unwrap_or(&Dynamics::Invariant)
    }

    /// Check the declaration against a dataset.
    pub fn validate(&self, ds: &TimeSeriesDataset) -> Result<()> {
        if self.outcome_lags < 1 {
            return Err(Error::Config("outcome_lags must be at least 1".into()));
        }
        let names = self.coefficient_names(ds);
        let n = ds.len();
        for (coef, dynamics) in &self.dynamics {
            if !names.contains(coef) {
                return Err(Error::Config(format!("unknown coefficient {coef:?}; expected one of {names:?}")));
            }
            match dynamics {
                Dynamics::RandomWalk { variance: Some(v) } | Dynamics::Ar { variance: Some(v), .. }
                    if !(*v >= 0.0 && v.is_finite()) =>
                {
                    return Err(Error::Config(format!("variance for {coef} must be non-negative")));
                }
                Dynamics::Ar { phi, .. } => check_stationary(coef, phi)?,
                Dynamics::PeriodicStable { change_points: Some(cps) } => {
                    check_change_points(coef, cps, n)?;
                }
                _ => {}
            }
        }
        if let Some(v) = self.obs_variance {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config("obs_variance must be positive".into()));
            }
        }
        if let Some(v) = self.prior_variance {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config("prior_variance must be positive".into()));
            }
        }
        Ok(())
    }

    /// Whether every dynamics tag is realizable as is.
    pub fn is_resolved(&self) -> bool {
        self.dynamics.values().all(Dynamics::is_resolved)
    }

    /// Whether every coefficient is constant, making the model a regression.
    pub fn is_time_invariant(&self) -> bool {
        self.dynamics.values().all(|d| matches!(d, Dynamics::Invariant))
    }

    /// Replace every unresolved tag with an estimated random walk.
    pub fn exploratory(&self) -> ModelSpec {
        let mut out = self.clone();
        for d in out.dynamics.values_mut() {
            if !d.is_resolved() {
                *d = Dynamics::RandomWalk { variance: None };
            }
        }
        out
    }
}

pub(crate) fn lagged_name(base: &str, lag: usize) -> String {
    if lag == 0 {
        base.to_string()
    } else {
        format!("{base}_lag{lag}")
    }
}

fn check_change_points(coef: &str, cps: &[usize], n: usize) -> Result<()> {
    let mut prev = 1;
    for &cp in cps {
        if cp <= prev || cp >= n {
            return Err(Error::Config(format!(
                "change points for {coef} must be strictly increasing inside (1, {n}), got {cps:?}"
            )));
        }
        prev = cp;
    }
    Ok(())
}

fn check_stationary(coef: &str, phi: &[f64]) -> Result<()> {
    if phi.is_empty() {
        return Err(Error::Config(format!("AR dynamics for {coef} need order at least 1")));
    }
    let p = phi.len();
    let mut companion = nalgebra::DMatrix::zeros(p, p);
    for (j, v) in phi.iter().enumerate() {
        companion[(0, j)] = *v;
    }
    for i in 1..p {
        companion[(i, i - 1)] = 1.0;
    }
    let radius = companion.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    if radius >= 1.0 {
        return Err(Error::Config(format!(
            "AR coefficients for {coef} are not stationary (spectral radius {radius:.4})"
        )));
    }
    Ok(())
}
