use log::warn;

use super::{BeliefPath, GaussianBelief, StateSpace};
use crate::error::{Error, Result};
use crate::linalg::{condition_number, solve_symmetric, symmetrize_in_place};

/// Backward (Rauch–Tung–Striebel) recursion started from `(s_T, S_T) = (m_T, C_T)`:
///
/// `s_t = m_t + C_t G_{t+1}ᵀ R_{t+1}⁻¹ (s_{t+1} − G_{t+1} m_t)`
/// `S_t = C_t − C_t G_{t+1}ᵀ R_{t+1}⁻¹ (R_{t+1} − S_{t+1}) R_{t+1}⁻¹ G_{t+1} C_t`
///
/// A singular `R_{t+1}` is handled with a pseudo-inverse.
pub fn kalman_smoother(ss: &StateSpace, fp: &BeliefPath) -> Result<BeliefPath> {
    let n = fp.beliefs.len();
    if n != ss.len() || fp.predicted.len() != n {
        return Err(Error::Contract(format!(
            "filter path of length {n} does not match system length {}",
            ss.len()
        )));
    }
    let d = ss.dim();
    if fp.beliefs.iter().any(|b| b.mean.len() != d || b.cov.nrows() != d) {
        return Err(Error::Contract("filter path dimension does not match system".into()));
    }
    let mut smoothed: Vec<GaussianBelief> = fp.beliefs.clone();
    if n == 0 {
        return Ok(BeliefPath { beliefs: smoothed, predicted: fp.predicted.clone(), loglik: fp.loglik });
    }

    let mut warned = false;
    for t in (0..n - 1).rev() {
        let g_next = ss.g().at(t + 1);
        let pred = &fp.predicted[t + 1];
        let filt = &fp.beliefs[t];

        // J = C_t Gᵀ R⁻¹, obtained as (R⁻¹ G C_t)ᵀ since R and C_t are symmetric.
        let gc = g_next * &filt.cov;
        let (x, fallback) = solve_symmetric(&pred.cov, &gc);
        if fallback && !warned {
            warn!(
                "smoother: singular one-step covariance at t={} (condition number {:.3e}); using pseudo-inverse",
                t + 2,
                condition_number(&pred.cov)
            );
            warned = true;
        }
        let j = x.transpose();

        let mean = &filt.mean + &j * (&smoothed[t + 1].mean - &pred.mean);
        let mut cov = &filt.cov - &j * (&pred.cov - &smoothed[t + 1].cov) * j.transpose();
        symmetrize_in_place(&mut cov);
        smoothed[t] = GaussianBelief { mean, cov };
    }
    Ok(BeliefPath { beliefs: smoothed, predicted: fp.predicted.clone(), loglik: fp.loglik })
}
