use log::warn;
use nalgebra::DMatrix;

use super::ar::ar_fill;
use super::fit::fit_model;
use super::mice::mice_completions;
use super::pool::{CoefficientPaths, PooledEstimate};
use super::{check_inputs, ImputationConfig, ImputationResult, Method};
use crate::design::{build_design, splice_complete_cases, Dynamics, ModelSpec, TimeSeriesDataset};
use crate::dlm::StructuralParams;
use crate::error::{Error, Result};

/// One completed outcome series, with optional replacement values for the
/// lag-1 regressor slot (chained equations impute that column separately).
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub outcome: Vec<f64>,
    /// Per time, a value for the lag-1 slot that overrides `outcome[t-1]`.
    pub lagged_outcome: Option<Vec<Option<f64>>>,
}

impl Completion {
    fn plain(outcome: Vec<f64>) -> Self {
        Self { outcome, lagged_outcome: None }
    }
}

fn observed_points(y: &[Option<f64>]) -> Result<Vec<(usize, f64)>> {
    let pts: Vec<(usize, f64)> = y.iter().enumerate().filter_map(|(t, v)| v.map(|v| (t, v))).collect();
    if pts.is_empty() {
        return Err(Error::Contract("every outcome is missing".into()));
    }
    Ok(pts)
}

/// Straight lines between flanking observations; edges held flat.
pub fn interpolate_linear(y: &[Option<f64>]) -> Result<Vec<f64>> {
    let pts = observed_points(y)?;
    Ok(piecewise(y.len(), &pts, |t, (t0, y0), (t1, y1)| {
        y0 + (y1 - y0) * (t - t0) as f64 / (t1 - t0) as f64
    }))
}

/// Fill gaps between consecutive observations with `inner`; hold edges flat.
fn piecewise<F>(n: usize, pts: &[(usize, f64)], inner: F) -> Vec<f64>
where
    F: Fn(usize, (usize, f64), (usize, f64)) -> f64,
{
    let mut out = vec![0.0; n];
    let (first, last) = (pts[0], pts[pts.len() - 1]);
    for (t, v) in out.iter_mut().enumerate() {
        if t <= first.0 {
            *v = first.1;
        } else if t >= last.0 {
            *v = last.1;
        }
    }
    for w in pts.windows(2) {
        out[w[0].0] = w[0].1;
        for t in w[0].0 + 1..w[1].0 {
            out[t] = inner(t, w[0], w[1]);
        }
    }
    out
}

fn locf(y: &[Option<f64>]) -> Result<Vec<f64>> {
    let pts = observed_points(y)?;
    let mut carry = pts[0].1;
    Ok(y.iter()
        .map(|v| {
            if let Some(x) = v {
                carry = *x;
            }
            carry
        })
        .collect())
}

fn mean_fill(y: &[Option<f64>]) -> Result<Vec<f64>> {
    let pts = observed_points(y)?;
    let mean = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    Ok(y.iter().map(|v| v.unwrap_or(mean)).collect())
}

/// Natural cubic spline through the observed points; edges held flat.
fn spline_fill(y: &[Option<f64>]) -> Result<Vec<f64>> {
    let pts = observed_points(y)?;
    if pts.len() < 4 {
        warn!("spline needs at least 4 observed points, found {}; using linear interpolation", pts.len());
        return interpolate_linear(y);
    }
    let m = natural_spline_second_derivatives(&pts);
    let index: Vec<usize> = pts.iter().map(|p| p.0).collect();
    Ok(piecewise(y.len(), &pts, |t, (t0, y0), (t1, y1)| {
        let i = index.binary_search(&t0).expect("knot");
        let h = (t1 - t0) as f64;
        let (a, b) = ((t1 - t) as f64 / h, (t - t0) as f64 / h);
        a * y0 + b * y1 + ((a.powi(3) - a) * m[i] + (b.powi(3) - b) * m[i + 1]) * h * h / 6.0
    }))
}

/// Second derivatives at the knots with zero end curvature (Thomas algorithm).
fn natural_spline_second_derivatives(pts: &[(usize, f64)]) -> Vec<f64> {
    let n = pts.len();
    let h: Vec<f64> = pts.windows(2).map(|w| (w[1].0 - w[0].0) as f64).collect();
    let mut m = vec![0.0; n];
    let inner = n - 2;
    let mut diag = vec![0.0; inner];
    let mut upper = vec![0.0; inner];
    let mut rhs = vec![0.0; inner];
    for k in 0..inner {
        let i = k + 1;
        diag[k] = 2.0 * (h[i - 1] + h[i]);
        upper[k] = h[i];
        rhs[k] = 6.0 * ((pts[i + 1].1 - pts[i].1) / h[i] - (pts[i].1 - pts[i - 1].1) / h[i - 1]);
    }
    for k in 1..inner {
        let lower = h[k];
        let f = lower / diag[k - 1];
        diag[k] -= f * upper[k - 1];
        rhs[k] -= f * rhs[k - 1];
    }
    for k in (0..inner).rev() {
        let next = if k + 1 < inner { m[k + 2] } else { 0.0 };
        m[k + 1] = (rhs[k] - upper[k] * next) / diag[k];
    }
    m
}

/// Completed outcome series for a baseline method: one for the deterministic
/// fills, `cfg.r` for chained equations.
pub fn baseline_impute(ds: &TimeSeriesDataset, method: Method, cfg: &ImputationConfig) -> Result<Vec<Completion>> {
    let y = ds.y();
    let single = |v: Vec<f64>| Ok(vec![Completion::plain(v)]);
    match method {
        Method::Mean => single(mean_fill(y)?),
        Method::Locf => single(locf(y)?),
        Method::Linear => single(interpolate_linear(y)?),
        Method::Spline => single(spline_fill(y)?),
        Method::Ar => single(ar_fill(y)?),
        Method::Mice => mice_completions(ds, cfg),
        other => Err(Error::Contract(format!("{other} is not a baseline imputation method"))),
    }
}

/// Fit the declaration to each completed series (outcome treated as observed)
/// and pool the fits.
pub fn fit_completed(
    method: Method,
    ds: &TimeSeriesDataset,
    spec: &ModelSpec,
    completions: &[Completion],
    cfg: &ImputationConfig,
) -> Result<ImputationResult> {
    check_inputs(ds, spec, cfg)?;
    if completions.is_empty() {
        return Err(Error::Contract("no completed series to fit".into()));
    }
    let mut warm: Vec<StructuralParams> = Vec::new();
    let mut paths = Vec::with_capacity(completions.len());
    let mut covs = Vec::with_capacity(completions.len());
    let mut first = None;
    for c in completions {
        let full = ds.completed(&c.outcome)?;
        let mut dm = build_design(&full, spec, None)?;
        // A regression reads each row of the completed wide frame as is; a
        // dynamic model lags the completed series itself.
        if let Some(lags) = c.lagged_outcome.as_ref().filter(|_| spec.is_time_invariant()) {
            for (t, v) in lags.iter().enumerate() {
                if let Some(v) = v {
                    if t >= 1 && spec.outcome_lags >= 1 {
                        dm.set_outcome_lag(t, 1, *v);
                    }
                }
            }
        }
        let fit = fit_model(spec, &dm, &warm, &cfg.fit)?;
        if warm.is_empty() {
            warm = fit.warm_start();
        }
        paths.push(fit.paths());
        covs.push(fit.smoothed.beliefs.last().map(|b| b.cov.clone()).unwrap_or_default());
        if first.is_none() {
            first = Some(fit);
        }
    }
    let fit = first.expect("at least one completion");
    let d = fit.layout.dim();
    let terminal_state_cov = covs.iter().fold(DMatrix::zeros(d, d), |a, c| a + c) / covs.len() as f64;
    Ok(ImputationResult {
        method,
        pooled: PooledEstimate::from_paths(&paths)?,
        completed_outcomes: completions.iter().map(|c| c.outcome.clone()).collect(),
        change_points: fit.change_points(),
        params: fit.params,
        spec: fit.spec,
        loglik: fit.loglik,
        trace: Vec::new(),
        converged: fit.converged,
        terminal_state_cov,
        original_times: None,
    })
}

/// Drop incomplete rows, fit on the compressed timeline and report estimates
/// at each original time from the last surviving row at or before it.
pub fn complete_case_fit(ds: &TimeSeriesDataset, spec: &ModelSpec, cfg: &ImputationConfig) -> Result<ImputationResult> {
    check_inputs(ds, spec, cfg)?;
    let dm = build_design(ds, spec, None)?;
    let spliced = splice_complete_cases(ds, &dm)?;
    let times = &spliced.original_times;

    // Declared change points move onto the spliced timeline: a new period
    // starts at the first survivor at or after its original start.
    let mut local = spec.clone();
    for d in local.dynamics.values_mut() {
        if let Dynamics::PeriodicStable { change_points: Some(cps) } = d {
            let mapped: Vec<usize> = cps.iter().map(|&c| times.partition_point(|&o| o < c)).collect();
            let mut kept: Vec<usize> = mapped.into_iter().filter(|&c| c > 0 && c < times.len()).collect();
            kept.dedup();
            *cps = kept;
        }
    }

    let fit = fit_model(&local, &spliced.design, &[], &cfg.fit)?;
    let pooled_spliced = PooledEstimate::from_paths(&[CoefficientPaths::from_beliefs(&fit.layout, &fit.smoothed)])?;
    let map: Vec<usize> = (0..ds.len()).map(|t| spliced.spliced_index_at(t).unwrap_or(0)).collect();
    let change_points = fit
        .change_points()
        .into_iter()
        .map(|(name, cps)| (name, cps.iter().map(|&c| times[c]).collect()))
        .collect();
    let mut spec_out = fit.spec.clone();
    for (name, d) in spec_out.dynamics.iter_mut() {
        if let Dynamics::PeriodicStable { change_points: Some(cps) } = d {
            *cps = fit.change_points().get(name).map(|c| c.iter().map(|&i| times[i]).collect()).unwrap_or_default();
        }
    }
    Ok(ImputationResult {
        method: Method::Cc,
        pooled: pooled_spliced.remap(&map),
        completed_outcomes: Vec::new(),
        params: fit.params.clone(),
        spec: spec_out,
        loglik: fit.loglik,
        trace: Vec::new(),
        converged: fit.converged,
        change_points,
        terminal_state_cov: fit.smoothed.beliefs.last().map(|b| b.cov.clone()).unwrap_or_default(),
        original_times: Some(spliced.original_times),
    })
}
