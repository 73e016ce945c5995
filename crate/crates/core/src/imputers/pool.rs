use serde::Serialize;

use crate::dlm::BeliefPath;
use crate::design::StateLayout;
use crate::error::{Error, Result};

/// Two-sided 90% standard normal quantile.
pub const Z90: f64 = 1.644_853_626_951_472_2;

/// Rubin-combined estimate of one scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PooledValue {
    pub mean: f64,
    /// Average within-imputation variance.
    pub within: f64,
    /// Between-imputation variance.
    pub between: f64,
    /// `within + (1 + 1/r)·between`.
    pub total: f64,
}

impl PooledValue {
    pub fn se(&self) -> f64 {
        self.total.sqrt()
    }

    /// Normal-quantile 90% interval.
    pub fn interval(&self) -> (f64, f64) {
        let half = Z90 * self.se();
        (self.mean - half, self.mean + half)
    }
}

/// Combine `r ≥ 2` estimates and their variances by Rubin's rule.
pub fn rubin_pool(estimates: &[f64], variances: &[f64]) -> Result<PooledValue> {
    let r = estimates.len();
    if r < 2 {
        return Err(Error::Contract(format!("Rubin pooling needs at least 2 estimates, got {r}")));
    }
    if variances.len() != r {
        return Err(Error::Contract("estimates and variances differ in length".into()));
    }
    if variances.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Contract("variances must be non-negative".into()));
    }
    Ok(pool_unchecked(estimates, variances))
}

fn pool_unchecked(estimates: &[f64], variances: &[f64]) -> PooledValue {
    let r = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / r;
    let within = variances.iter().sum::<f64>() / r;
    let between = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (r - 1.0);
    PooledValue { mean, within, between, total: within + (1.0 + 1.0 / r) * between }
}

/// Per-coefficient, per-time smoothed means and variances from one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPaths {
    pub names: Vec<String>,
    /// `[coefficient][t]`
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<Vec<f64>>,
}

impl CoefficientPaths {
    pub fn from_beliefs(layout: &StateLayout, path: &BeliefPath) -> Self {
        let (means, vars) = layout.loadings().iter().map(|l| path.project(l)).unzip();
        Self { names: layout.names().to_vec(), means, vars }
    }

    pub fn len(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Pooled coefficient paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledEstimate {
    names: Vec<String>,
    draws: usize,
    /// `[coefficient][t]`
    values: Vec<Vec<PooledValue>>,
}

impl PooledEstimate {
    /// Rubin-pool `r ≥ 2` sets of paths; a single set passes through with zero
    /// between-imputation variance.
    pub fn from_paths(paths: &[CoefficientPaths]) -> Result<Self> {
        let first = paths.first().ok_or_else(|| Error::Contract("no coefficient paths to pool".into()))?;
        if paths.iter().any(|p| p.names != first.names || p.len() != first.len()) {
            return Err(Error::Contract("coefficient paths disagree in shape".into()));
        }
        let r = paths.len();
        let values = (0..first.names.len())
            .map(|i| {
                (0..first.len())
                    .map(|t| {
                        if r == 1 {
                            let (m, v) = (first.means[i][t], first.vars[i][t].max(0.0));
                            PooledValue { mean: m, within: v, between: 0.0, total: v }
                        } else {
                            let est: Vec<f64> = paths.iter().map(|p| p.means[i][t]).collect();
                            let var: Vec<f64> = paths.iter().map(|p| p.vars[i][t].max(0.0)).collect();
                            pool_unchecked(&est, &var)
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self { names: first.names.clone(), draws: r, values })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Number of pooled fits.
    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coefficient_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Pooled value of coefficient `i` at 0-based time `t`.
    pub fn at(&self, i: usize, t: usize) -> PooledValue {
        self.values[i][t]
    }

    pub fn get(&self, name: &str, t: usize) -> Option<PooledValue> {
        self.coefficient_index(name).map(|i| self.at(i, t))
    }

    pub fn path(&self, i: usize) -> &[PooledValue] {
        &self.values[i]
    }

    pub fn means(&self, i: usize) -> Vec<f64> {
        self.values[i].iter().map(|v| v.mean).collect()
    }

    /// Re-index onto another timeline: output time `t` takes row `map[t]`.
    pub(crate) fn remap(&self, map: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            draws: self.draws,
            values: self.values.iter().map(|path| map.iter().map(|&s| path[s]).collect()).collect(),
        }
    }
}
