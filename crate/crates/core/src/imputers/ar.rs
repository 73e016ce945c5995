use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::dlm::{kalman_filter, kalman_smoother, log_likelihood, Schedule, StateSpace};
use crate::error::{Error, Result};
use crate::linalg::symmetrize_in_place;
use crate::optim::{nelder_mead, SimplexOptions};

const MAX_ORDER: usize = 5;
/// Observation noise relative to the outcome variance; the AR state is observed
/// essentially exactly.
const OBS_NOISE_FRACTION: f64 = 1e-6;
const MAX_PARTIAL: f64 = 0.995;

/// AR coefficients from partial autocorrelations (Durbin–Levinson).
fn pacf_to_ar(partial: &[f64]) -> Vec<f64> {
    let mut phi: Vec<f64> = Vec::with_capacity(partial.len());
    for (m, &k) in partial.iter().enumerate() {
        let prev = phi.clone();
        phi = (0..m).map(|j| prev[j] - k * prev[m - 1 - j]).collect();
        phi.push(k);
    }
    phi
}

fn companion(phi: &[f64]) -> DMatrix<f64> {
    let p = phi.len();
    let mut g = DMatrix::zeros(p, p);
    for (j, v) in phi.iter().enumerate() {
        g[(0, j)] = *v;
    }
    for i in 1..p {
        g[(i, i - 1)] = 1.0;
    }
    g
}

/// Solve `P = G P Gᵀ + W` by vectorization.
fn stationary_covariance(g: &DMatrix<f64>, w: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let p = g.nrows();
    let lhs = DMatrix::identity(p * p, p * p) - g.kronecker(g);
    let rhs = DVector::from_column_slice(w.as_slice());
    let x = lhs.lu().solve(&rhs)?;
    let mut cov = DMatrix::from_column_slice(p, p, x.as_slice());
    symmetrize_in_place(&mut cov);
    Some(cov)
}

fn ar_state_space(phi: &[f64], sigma2: f64, n: usize, obs_noise: f64) -> Result<StateSpace> {
    let p = phi.len();
    let g = companion(phi);
    let mut w = DMatrix::zeros(p, p);
    w[(0, 0)] = sigma2;
    let c0 = stationary_covariance(&g, &w).ok_or_else(|| Error::Numerical { t: 0, msg: "AR stationary covariance is singular".into() })?;
    let mut f = DVector::zeros(p);
    f[0] = 1.0;
    StateSpace::new(Schedule::constant(g), Schedule::constant(w), vec![f; n], Schedule::constant(obs_noise), DVector::zeros(p), c0)
}

struct ArFit {
    phi: Vec<f64>,
    sigma2: f64,
    aic: f64,
}

fn fit_order(z: &[Option<f64>], p: usize, var: f64) -> Option<ArFit> {
    let n = z.len();
    let obs_noise = OBS_NOISE_FRACTION * var;
    let unpack = |x: &[f64]| -> (Vec<f64>, f64) {
        let partial: Vec<f64> = x[..p].iter().map(|u| MAX_PARTIAL * u.tanh()).collect();
        (pacf_to_ar(&partial), x[p].clamp(-30.0, 20.0).exp())
    };
    let objective = |x: &[f64]| -> f64 {
        let (phi, s2) = unpack(x);
        match ar_state_space(&phi, s2, n, obs_noise).and_then(|ss| log_likelihood(&ss, z)) {
            Ok(ll) if ll.is_finite() => -ll,
            _ => f64::INFINITY,
        }
    };
    let opts = SimplexOptions::default();
    let mut starts = vec![vec![0.0; p + 1], vec![0.0; p + 1]];
    starts[0][p] = var.ln();
    starts[1][0] = 1.0;
    starts[1][p] = (0.5 * var).ln();
    let best = starts
        .iter()
        .map(|s| nelder_mead(objective, s, &opts))
        .min_by(|a, b| a.value.total_cmp(&b.value))?;
    if !best.value.is_finite() {
        return None;
    }
    let (phi, sigma2) = unpack(&best.x);
    Some(ArFit { phi, sigma2, aic: 2.0 * best.value + 2.0 * (p + 1) as f64 })
}

/// Fill missing outcomes with the smoothed conditional mean of an AR(p)
/// model, `p ∈ 1..=5` chosen by AIC. Exposures and covariates are ignored.
pub(crate) fn ar_fill(y: &[Option<f64>]) -> Result<Vec<f64>> {
    let obs: Vec<f64> = y.iter().flatten().copied().collect();
    if obs.is_empty() {
        return Err(Error::Contract("every outcome is missing".into()));
    }
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    let var = if obs.len() > 1 {
        obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (obs.len() - 1) as f64
    } else {
        0.0
    };
    let mean_fill = || y.iter().map(|v| v.unwrap_or(mean)).collect::<Vec<_>>();
    if !(var > 1e-12 * mean.abs().max(1.0).powi(2)) {
        return Ok(mean_fill());
    }
    let z: Vec<Option<f64>> = y.iter().map(|v| v.map(|x| x - mean)).collect();
    let best = (1..=MAX_ORDER)
        .filter(|p| obs.len() >= 3 * p + 5)
        .filter_map(|p| fit_order(&z, p, var))
        .min_by(|a, b| a.aic.total_cmp(&b.aic));
    let Some(best) = best else {
        warn!("no AR model could be fitted to {} observations; using the mean", obs.len());
        return Ok(mean_fill());
    };
    let ss = ar_state_space(&best.phi, best.sigma2, y.len(), OBS_NOISE_FRACTION * var)?;
    let smoothed = kalman_smoother(&ss, &kalman_filter(&ss, &z)?)?;
    Ok(y.iter().zip(&smoothed.beliefs).map(|(v, b)| v.unwrap_or(mean + b.mean[0])).collect())
}
