use std::collections::BTreeMap;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::baseline::interpolate_linear;
use super::fit::{fit_model, ModelFit};
use super::pool::{CoefficientPaths, PooledEstimate};
use super::{check_inputs, ImputationConfig, ImputationResult, Method, TraceEntry};
use crate::design::{build_design, DesignMatrix, ModelSpec, TimeSeriesDataset};
use crate::dlm::{PathSampler, StructuralParams};
use crate::error::Result;
use crate::rng::{derive_seed, rng_from_seed};

/// Outcome of one multiple-imputation pass.
struct Pass {
    pooled: PooledEstimate,
    completions: Vec<Vec<f64>>,
    /// Average draw at each missing time.
    draw_mean: Vec<f64>,
    terminal_cov: DMatrix<f64>,
}

/// Draw `r` outcome completions from whole smoothed state paths of `fit`,
/// refit each with the fitted structural parameters held fixed and pool the
/// refits.
fn imputation_pass(ds: &TimeSeriesDataset, fit: &ModelFit, mis: &[usize], r: usize, seed: u64) -> Result<Pass> {
    let sampler = PathSampler::new(&fit.state_space, &fit.filtered)?;
    let observed: Vec<f64> = ds.y().iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let lag_loadings: Vec<(usize, DVector<f64>)> = (1..=fit.spec.outcome_lags)
        .filter_map(|j| fit.layout.index_of(&format!("y_lag{j}")).map(|i| (j, fit.layout.loading(i))))
        .collect();

    let refits: Vec<(Vec<f64>, CoefficientPaths, DMatrix<f64>)> = (0..r)
        .into_par_iter()
        .map(|k| -> Result<_> {
            let mut rng = rng_from_seed(derive_seed(seed, k as u64));
            let mut fill = vec![None; ds.len()];
            let mut completed = observed.clone();
            let states = sampler.sample(&mut rng);
            for &t in mis {
                let theta = &states[t];
                let z: f64 = StandardNormal.sample(&mut rng);
                let f = &fit.state_space.f()[t];
                // Lagged outcomes that were themselves drawn enter at their drawn values.
                let lag_shift: f64 = lag_loadings
                    .iter()
                    .filter(|(j, _)| t >= *j && fill[t - j].is_some())
                    .map(|(j, l)| (completed[t - j] - l.dot(f)) * l.dot(theta))
                    .sum();
                let v = f.dot(theta) + lag_shift + fit.state_space.v().at(t).sqrt() * z;
                fill[t] = Some(v);
                completed[t] = v;
            }
            let dm = build_design(ds, &fit.spec, Some(&fill))?;
            let smoothed = fit.refit(&dm)?;
            let terminal = smoothed.beliefs.last().map(|b| b.cov.clone()).unwrap_or_default();
            Ok((completed, CoefficientPaths::from_beliefs(&fit.layout, &smoothed), terminal))
        })
        .collect::<Result<_>>()?;

    let paths: Vec<CoefficientPaths> = refits.iter().map(|(_, p, _)| p.clone()).collect();
    let pooled = PooledEstimate::from_paths(&paths)?;
    let draw_mean = mis.iter().map(|&t| refits.iter().map(|(c, _, _)| c[t]).sum::<f64>() / r as f64).collect();
    let d = fit.layout.dim();
    let terminal_cov = refits.iter().fold(DMatrix::zeros(d, d), |acc, (_, _, c)| acc + c) / r as f64;
    Ok(Pass { pooled, completions: refits.into_iter().map(|(c, _, _)| c).collect(), draw_mean, terminal_cov })
}

/// State carried between outer iterations for the convergence test.
struct Snapshot {
    loglik: f64,
    means: Vec<Vec<f64>>,
    params: StructuralParams,
    change_points: BTreeMap<String, Vec<usize>>,
}

/// Compare against the previous iteration: relative log-likelihood change,
/// scaled coefficient change and relative structural-parameter change must
/// all fall below `tol`, and the change points must be unchanged.
fn compare(prev: Option<&Snapshot>, cur: &Snapshot, iteration: usize, burn_in: usize, tol: f64, mle_converged: bool) -> (TraceEntry, bool) {
    let (ll_change, coef_change, param_change, same_cps) = match prev {
        None => (f64::NAN, f64::NAN, f64::NAN, false),
        Some(p) => {
            let ll = (cur.loglik - p.loglik).abs() / p.loglik.abs().max(1.0);
            let coef = cur
                .means
                .iter()
                .zip(&p.means)
                .map(|(a, b)| {
                    let scale = b[burn_in..].iter().fold(1.0f64, |m, v| m.max(v.abs()));
                    a[burn_in..].iter().zip(&b[burn_in..]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
                })
                .fold(0.0, f64::max);
            (ll, coef, cur.params.max_rel_change(&p.params), cur.change_points == p.change_points)
        }
    };
    let done = same_cps && ll_change < tol && coef_change < tol && param_change < tol;
    let entry = TraceEntry {
        iteration,
        loglik: cur.loglik,
        loglik_change: ll_change,
        max_coefficient_change: coef_change,
        param_change,
        mle_converged,
        change_points: cur.change_points.clone(),
    };
    (entry, done)
}

fn initial_fill(ds: &TimeSeriesDataset, mis: &[usize]) -> Result<Vec<Option<f64>>> {
    let linear = interpolate_linear(ds.y())?;
    let mut fill = vec![None; ds.len()];
    for &t in mis {
        fill[t] = Some(linear[t]);
    }
    Ok(fill)
}

struct Finished {
    fit: ModelFit,
    pass: Pass,
    trace: Vec<TraceEntry>,
    converged: bool,
}

fn assemble(method: Method, f: Finished) -> ImputationResult {
    ImputationResult {
        method,
        pooled: f.pass.pooled,
        completed_outcomes: f.pass.completions,
        change_points: f.fit.change_points(),
        params: f.fit.params,
        spec: f.fit.spec,
        loglik: f.fit.loglik,
        trace: f.trace,
        converged: f.converged,
        terminal_state_cov: f.pass.terminal_cov,
        original_times: None,
    }
}

/// Iterate multiple imputation and refitting: fit on the current completed
/// lags, draw `r` completions, refit and pool, and replace the lag fill-ins by
/// the average draw, until the fit stops changing.
pub fn ssm_mp(ds: &TimeSeriesDataset, spec: &ModelSpec, cfg: &ImputationConfig) -> Result<ImputationResult> {
    check_inputs(ds, spec, cfg)?;
    let mis = ds.missing_times();
    let mut fill = initial_fill(ds, &mis)?;
    let mut warm = Vec::new();
    let mut trace = Vec::new();
    let mut prev: Option<Snapshot> = None;
    let mut last = None;
    let mut converged = false;

    for iteration in 1..=cfg.max_iter {
        let (fit, pass, burn_in) = (|| -> Result<_> {
            let dm = build_design(ds, spec, Some(&fill))?;
            let fit = fit_model(spec, &dm, &warm, &cfg.fit)?;
            let pass = imputation_pass(ds, &fit, &mis, cfg.r, derive_seed(cfg.seed, iteration as u64))?;
            Ok((fit, pass, dm.burn_in()))
        })()
        .map_err(|e| e.at_iteration(iteration))?;

        let snap = Snapshot {
            loglik: fit.loglik,
            means: (0..pass.pooled.names().len()).map(|i| pass.pooled.means(i)).collect(),
            params: fit.params.clone(),
            change_points: fit.change_points(),
        };
        let (entry, done) = compare(prev.as_ref(), &snap, iteration, burn_in, cfg.tol, fit.converged);
        debug!("ssmmp iteration {iteration}: loglik {:.6} change {:.3e}", entry.loglik, entry.max_coefficient_change);
        trace.push(entry);
        for (&t, v) in mis.iter().zip(&pass.draw_mean) {
            fill[t] = Some(*v);
        }
        warm = fit.warm_start();
        prev = Some(snap);
        last = Some((fit, pass));
        if mis.is_empty() || done {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("ssmmp did not converge in {} iterations", cfg.max_iter);
    }
    let (fit, pass) = last.expect("max_iter >= 1");
    Ok(assemble(Method::Ssmmp, Finished { fit, pass, trace, converged }))
}

/// Alternate fitting and deterministic substitution of fitted values into the
/// lag slots until convergence, then run one multiple-imputation pass.
pub fn ssm_impute(ds: &TimeSeriesDataset, spec: &ModelSpec, cfg: &ImputationConfig) -> Result<ImputationResult> {
    check_inputs(ds, spec, cfg)?;
    let mis = ds.missing_times();
    let mut fill = initial_fill(ds, &mis)?;
    let mut warm = Vec::new();
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut prev: Option<Snapshot> = None;
    let mut last: Option<ModelFit> = None;
    let mut converged = false;

    for iteration in 1..=cfg.max_iter {
        let (fit, dm): (ModelFit, DesignMatrix) = (|| -> Result<_> {
            let dm = build_design(ds, spec, Some(&fill))?;
            let fit = fit_model(spec, &dm, &warm, &cfg.fit)?;
            Ok((fit, dm))
        })()
        .map_err(|e| e.at_iteration(iteration))?;

        let snap = Snapshot {
            loglik: fit.loglik,
            means: fit.paths().means,
            params: fit.params.clone(),
            change_points: fit.change_points(),
        };
        let (entry, done) = compare(prev.as_ref(), &snap, iteration, dm.burn_in(), cfg.tol, fit.converged);
        if let Some(p) = trace.last() {
            if iteration > 2 && entry.loglik < p.loglik - cfg.tol * p.loglik.abs().max(1.0) {
                debug!("ssmimpute log-likelihood decreased at iteration {iteration}: {} -> {}", p.loglik, entry.loglik);
            }
        }
        trace.push(entry);
        warm = fit.warm_start();
        prev = Some(snap);
        if mis.is_empty() || done {
            converged = true;
            last = Some(fit);
            break;
        }
        let next: Vec<Option<f64>> = (0..ds.len())
            .map(|t| fill[t].map(|_| fit.state_space.f()[t].dot(&fit.smoothed.beliefs[t].mean)))
            .collect();
        fill = next;
        last = Some(fit);
    }
    if !converged {
        warn!("ssmimpute did not converge in {} iterations", cfg.max_iter);
    }
    let fit = last.expect("max_iter >= 1");
    let pass = imputation_pass(ds, &fit, &mis, cfg.r, derive_seed(cfg.seed, 0)).map_err(|e| e.at_iteration(trace.len()))?;
    Ok(assemble(Method::Ssmimpute, Finished { fit, pass, trace, converged }))
}
