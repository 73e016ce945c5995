//! Multiple imputation of missing outcomes through their lagged regressor
//! slots, Rubin pooling, complete-case analysis and baseline strategies.

mod ar;
mod baseline;
mod fit;
mod mice;
mod pool;
mod ssm;

pub use baseline::{baseline_impute, complete_case_fit, fit_completed, interpolate_linear, Completion};
pub use fit::{fit_model, FitSettings, ModelFit};
pub use pool::{rubin_pool, CoefficientPaths, PooledEstimate, PooledValue, Z90};
pub use ssm::{ssm_impute, ssm_mp};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::{ModelSpec, TimeSeriesDataset};
use crate::dlm::StructuralParams;
use crate::error::{Error, Result};

/// Stable method vocabulary shared by the library, CLI and output files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cc,
    Mean,
    Locf,
    Linear,
    Spline,
    Mice,
    Ar,
    Ssmimpute,
    Ssmmp,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Cc,
        Method::Mean,
        Method::Locf,
        Method::Linear,
        Method::Spline,
        Method::Mice,
        Method::Ar,
        Method::Ssmimpute,
        Method::Ssmmp,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Cc => "cc",
            Method::Mean => "mean",
            Method::Locf => "locf",
            Method::Linear => "linear",
            Method::Spline => "spline",
            Method::Mice => "mice",
            Method::Ar => "ar",
            Method::Ssmimpute => "ssmimpute",
            Method::Ssmmp => "ssmmp",
        }
    }

    /// Single deterministic completion followed by one fit.
    pub fn is_deterministic_baseline(self) -> bool {
        matches!(self, Method::Mean | Method::Locf | Method::Linear | Method::Spline | Method::Ar)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}; expected one of {}", vocabulary())))
    }
}

/// Comma-separated method names.
pub fn vocabulary() -> String {
    Method::ALL.iter().map(|m| m.label()).collect::<Vec<_>>().join(",")
}

fn default_r() -> usize {
    20
}
fn default_max_iter() -> usize {
    50
}
fn default_tol() -> f64 {
    1e-4
}
fn default_sweeps() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImputationConfig {
    /// Number of multiple-imputation draws.
    #[serde(default = "default_r")]
    pub r: usize,
    /// Cap on outer iterations.
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Relative convergence tolerance.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    /// Chained-equation sweeps per completion.
    #[serde(default = "default_sweeps")]
    pub mice_sweeps: usize,
    #[serde(default)]
    pub fit: FitSettings,
}

impl Default for ImputationConfig {
    fn default() -> Self {
        Self {
            r: default_r(),
            max_iter: default_max_iter(),
            tol: default_tol(),
            seed: 0,
            mice_sweeps: default_sweeps(),
            fit: FitSettings::default(),
        }
    }
}

impl ImputationConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.r < 2 {
            return Err(Error::Config(format!("r must be at least 2, got {}", self.r)));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Config("tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if self.mice_sweeps == 0 {
            return Err(Error::Config("mice_sweeps must be at least 1".into()));
        }
        Ok(())
    }
}

/// One outer iteration of an iterative imputer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub loglik: f64,
    /// Relative change against the previous iteration; NaN on the first.
    pub loglik_change: f64,
    /// Largest scaled change in coefficient means; NaN on the first.
    pub max_coefficient_change: f64,
    pub param_change: f64,
    pub mle_converged: bool,
    pub change_points: BTreeMap<String, Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct ImputationResult {
    pub method: Method,
    /// Pooled coefficient paths on the original timeline.
    pub pooled: PooledEstimate,
    /// Completed outcome series; observed values are passed through unchanged.
    pub completed_outcomes: Vec<Vec<f64>>,
    pub params: StructuralParams,
    /// Declaration with learned dynamics filled in.
    pub spec: ModelSpec,
    pub loglik: f64,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    /// Change points per periodic-stable coefficient on the original timeline.
    pub change_points: BTreeMap<String, Vec<usize>>,
    /// Within-imputation state covariance at the final time.
    pub terminal_state_cov: DMatrix<f64>,
    /// For complete-case analysis: original 0-based time of each spliced row.
    pub original_times: Option<Vec<usize>>,
}

/// Run any method in the vocabulary.
pub fn run_method(method: Method, ds: &TimeSeriesDataset, spec: &ModelSpec, cfg: &ImputationConfig) -> Result<ImputationResult> {
    match method {
        Method::Ssmmp => ssm_mp(ds, spec, cfg),
        Method::Ssmimpute => ssm_impute(ds, spec, cfg),
        Method::Cc => complete_case_fit(ds, spec, cfg),
        m => {
            let completions = baseline_impute(ds, m, cfg)?;
            fit_completed(m, ds, spec, &completions, cfg)
        }
    }
}

pub(crate) fn check_inputs(ds: &TimeSeriesDataset, spec: &ModelSpec, cfg: &ImputationConfig) -> Result<()> {
    cfg.validate()?;
    spec.validate(ds)?;
    if ds.observed_count() == 0 {
        return Err(Error::Contract("every outcome is missing".into()));
    }
    Ok(())
}
