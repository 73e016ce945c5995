use nalgebra::DVector;

use super::{ModelSpec, TimeSeriesDataset};
use crate::error::{Error, Result};

/// Per-time regressor rows `F_t = (1, Y_{t-1}, …, Y_{t-q}, A_t, …, A_{t-p}, C_t, …)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    names: Vec<String>,
    rows: Vec<DVector<f64>>,
    /// Response per row; `None` where the outcome is missing or the row is burn-in.
    response: Vec<Option<f64>>,
    imputed: Vec<bool>,
    incomplete: Vec<bool>,
    burn_in: usize,
    outcome_variance: f64,
    outcome_scale: f64,
}

impl DesignMatrix {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> &[DVector<f64>] {
        &self.rows
    }

    pub fn response(&self) -> &[Option<f64>] {
        &self.response
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn coefficient_count(&self) -> usize {
        self.names.len()
    }

    /// Rows whose lagged outcomes were filled from `imputed_y`.
    pub fn imputed(&self) -> &[bool] {
        &self.imputed
    }

    /// Rows that still reference a missing lagged outcome.
    pub fn incomplete(&self) -> &[bool] {
        &self.incomplete
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn is_burn_in(&self, t: usize) -> bool {
        t < self.burn_in
    }

    /// Marginal variance of the observed outcomes.
    pub fn outcome_variance(&self) -> f64 {
        self.outcome_variance
    }

    /// Half the mean squared first difference of observed outcomes; a
    /// drift-robust noise scale used to seed variance estimates.
    pub fn outcome_scale(&self) -> f64 {
        self.outcome_scale
    }

    pub fn is_complete(&self) -> bool {
        !self.incomplete.iter().any(|&b| b)
    }

    /// Replace the lag-`j` outcome slot of row `t`, marking the row imputed.
    pub(crate) fn set_outcome_lag(&mut self, t: usize, j: usize, value: f64) {
        self.rows[t][j] = value;
        if !self.is_burn_in(t) {
            self.imputed[t] = true;
            self.incomplete[t] = false;
        }
    }

    pub(crate) fn subset(&self, keep: &[usize]) -> DesignMatrix {
        DesignMatrix {
            names: self.names.clone(),
            rows: keep.iter().map(|&t| self.rows[t].clone()).collect(),
            response: keep.iter().map(|&t| self.response[t]).collect(),
            imputed: keep.iter().map(|&t| self.imputed[t]).collect(),
            incomplete: keep.iter().map(|&t| self.incomplete[t]).collect(),
            burn_in: 0,
            outcome_variance: self.outcome_variance,
            outcome_scale: self.outcome_scale,
        }
    }
}

/// For each time, the lags `j` whose source outcome `y_{t-j}` is missing.
pub fn derive_lag_missingness(mask: &[bool], lags: &[usize]) -> Vec<Vec<usize>> {
    (0..mask.len())
        .map(|t| lags.iter().copied().filter(|&j| j >= 1 && t >= j && mask[t - j]).collect())
        .collect()
}

/// Assemble the regressor rows. Missing lagged outcomes are taken from
/// `imputed_y` when it supplies a value (the row is flagged imputed) and left
/// as NaN otherwise (the row is flagged incomplete). The response is always
/// the observed outcome.
pub fn build_design(
    ds: &TimeSeriesDataset,
    spec: &ModelSpec,
    imputed_y: Option<&[Option<f64>]>,
) -> Result<DesignMatrix> {
    spec.validate(ds)?;
    let n = ds.len();
    let y = ds.y();
    if let Some(fill) = imputed_y {
        if fill.len() != n {
            return Err(Error::Contract(format!("imputed outcome has length {}, expected {n}", fill.len())));
        }
        for (t, (obs, f)) in y.iter().zip(fill).enumerate() {
            match (obs, f) {
                (Some(_), Some(_)) => {
                    return Err(Error::Contract(format!(
                        "imputed value supplied for observed outcome at t={}",
                        t + 1
                    )))
                }
                (None, Some(v)) if !v.is_finite() => {
                    return Err(Error::Contract(format!("imputed value at t={} is not finite", t + 1)))
                }
                _ => {}
            }
        }
    }

    let names = spec.coefficient_names(ds);
    let d = names.len();
    let burn_in = spec.burn_in();
    let mut rows = Vec::with_capacity(n);
    let mut imputed = vec![false; n];
    let mut incomplete = vec![false; n];
    for t in 0..n {
        let mut row = Vec::with_capacity(d);
        row.push(1.0);
        for j in 1..=spec.outcome_lags {
            if t < j {
                row.push(0.0);
                continue;
            }
            let src = t - j;
            let value = match (y[src], imputed_y.and_then(|f| f[src])) {
                (Some(v), _) => v,
                (None, Some(v)) => {
                    imputed[t] = true;
                    v
                }
                (None, None) => {
                    incomplete[t] = true;
                    f64::NAN
                }
            };
            row.push(value);
        }
        for s in ds.exposures() {
            row.extend((0..=spec.exposure_lags).map(|k| if t >= k { s.values[t - k] } else { 0.0 }));
        }
        for s in ds.covariates() {
            row.extend((0..=spec.covariate_lags).map(|k| if t >= k { s.values[t - k] } else { 0.0 }));
        }
        debug_assert_eq!(row.len(), d);
        rows.push(DVector::from_vec(row));
    }
    for t in 0..burn_in.min(n) {
        imputed[t] = false;
        incomplete[t] = false;
        // Burn-in rows never enter the likelihood; keep them finite.
        for v in rows[t].iter_mut().filter(|v| v.is_nan()) {
            *v = 0.0;
        }
    }
    let response: Vec<Option<f64>> =
        y.iter().enumerate().map(|(t, v)| if t < burn_in { None } else { *v }).collect();

    let observed: Vec<f64> = y.iter().flatten().copied().collect();
    let outcome_variance = variance(&observed);
    let diffs: Vec<f64> = y.windows(2).filter_map(|w| Some(w[1]? - w[0]?)).collect();
    let outcome_scale = if diffs.len() >= 2 {
        diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64 / 2.0
    } else {
        outcome_variance
    };

    Ok(DesignMatrix {
        names,
        rows,
        response,
        imputed,
        incomplete,
        burn_in,
        outcome_variance,
        outcome_scale: if outcome_scale > 0.0 { outcome_scale } else { outcome_variance.max(1.0) },
    })
}

fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 1.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    if var > 0.0 {
        var
    } else {
        1.0
    }
}
