use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{BeliefPath, GaussianBelief, StateSpace};
use crate::error::{Error, Result};
use crate::linalg::{psd_factor, solve_symmetric, symmetrize_in_place};
use crate::rng::rng_from_seed;

/// Pre-factored Gaussian for repeated sampling.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    /// Factor `belief.cov`, clipping negative eigenvalues at zero with a warning.
    pub fn new(belief: &GaussianBelief) -> Self {
        let (factor, clipped) = psd_factor(&belief.cov);
        if clipped {
            warn!("covariance is not positive semi-definite; negative eigenvalues clipped at 0");
        }
        Self { mean: belief.mean.clone(), factor }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.factor * z
    }
}

/// One draw from `N(belief.mean, belief.cov)`.
pub fn sample_gaussian<R: Rng + ?Sized>(belief: &GaussianBelief, rng: &mut R) -> DVector<f64> {
    GaussianSampler::new(belief).sample(rng)
}

/// `count` independent draws of the per-time states `θ̃_t ~ N(mean_t, cov_t)`.
/// The result is indexed `[draw][t]`.
pub fn draw_states(bp: &BeliefPath, count: usize, seed: u64) -> Result<Vec<Vec<DVector<f64>>>> {
    if count == 0 {
        return Err(Error::Contract("number of draws must be at least 1".into()));
    }
    let samplers: Vec<GaussianSampler> = bp.beliefs.iter().map(GaussianSampler::new).collect();
    let mut rng = rng_from_seed(seed);
    Ok((0..count)
        .map(|_| samplers.iter().map(|s| s.sample(&mut rng)).collect())
        .collect())
}

/// One backward step `θ_t | θ_{t+1} ~ N(m_t + J (θ_{t+1} − a_{t+1}), C_t − J R_{t+1} Jᵀ)`.
#[derive(Debug, Clone)]
struct BackwardStep {
    filtered_mean: DVector<f64>,
    next_predicted_mean: DVector<f64>,
    gain: DMatrix<f64>,
    factor: DMatrix<f64>,
}

/// Factor of a backward conditional covariance. Eigenvalues below round-off
/// relative to `scale` are set to zero so that states pinned by zero state noise
/// stay exactly pinned along each path.
fn conditional_factor(cov: &DMatrix<f64>, scale: f64) -> (DMatrix<f64>, bool) {
    let eig = SymmetricEigen::new(cov.clone());
    let floor = 1e-10 * scale.abs().max(f64::MIN_POSITIVE);
    let mut clipped = false;
    let mut l = eig.eigenvectors;
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        clipped |= lambda < -floor;
        let s = if lambda > floor { lambda.sqrt() } else { 0.0 };
        l.column_mut(j).scale_mut(s);
    }
    (l, clipped)
}

/// Joint sampler of whole state paths by forward filtering and backward
/// sampling. Each draw's marginal at time t is the smoothed belief, and
/// consecutive states carry their posterior dependence.
#[derive(Debug, Clone)]
pub struct PathSampler {
    last: GaussianSampler,
    steps: Vec<BackwardStep>,
}

impl PathSampler {
    /// Prepare backward steps from the filtered path `fp` of `ss`.
    pub fn new(ss: &StateSpace, fp: &BeliefPath) -> Result<Self> {
        let n = fp.beliefs.len();
        if n == 0 || n != ss.len() || fp.predicted.len() != n {
            return Err(Error::Contract(format!(
                "filter path of length {n} does not match system length {}",
                ss.len()
            )));
        }
        let mut clipped_any = false;
        let steps = (0..n - 1)
            .map(|t| {
                let pred = &fp.predicted[t + 1];
                let filt = &fp.beliefs[t];
                let gc = ss.g().at(t + 1) * &filt.cov;
                let gain = solve_symmetric(&pred.cov, &gc).0.transpose();
                let mut cov = &filt.cov - &gain * &pred.cov * gain.transpose();
                symmetrize_in_place(&mut cov);
                let (factor, clipped) = conditional_factor(&cov, filt.cov.trace());
                clipped_any |= clipped;
                BackwardStep { filtered_mean: filt.mean.clone(), next_predicted_mean: pred.mean.clone(), gain, factor }
            })
            .collect();
        if clipped_any {
            warn!("path sampler: backward covariance is not positive semi-definite; negative eigenvalues clipped at 0");
        }
        Ok(Self { last: GaussianSampler::new(&fp.beliefs[n - 1]), steps })
    }

    /// One state path, indexed by time.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<DVector<f64>> {
        let mut path = vec![self.last.sample(rng)];
        for step in self.steps.iter().rev() {
            let next = path.last().expect("path is non-empty");
            let z = DVector::from_fn(step.filtered_mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let theta = &step.filtered_mean + &step.gain * (next - &step.next_predicted_mean) + &step.factor * z;
            path.push(theta);
        }
        path.reverse();
        path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(mean: f64, var: f64, n: usize) -> BeliefPath {
        let belief = GaussianBelief {
            mean: DVector::from_element(1, mean),
            cov: DMatrix::from_element(1, 1, var),
        };
        BeliefPath { beliefs: vec![belief; n], predicted: Vec::new(), loglik: 0.0 }
    }

    #[test]
    fn zero_covariance_draws_equal_the_mean() {
        let bp = path(2.5, 0.0, 4);
        for draw in draw_states(&bp, 3, 1).unwrap() {
            for theta in draw {
                assert_eq!(theta[0], 2.5);
            }
        }
    }

    #[test]
    fn same_seed_same_draws() {
        let bp = path(0.0, 1.0, 5);
        assert_eq!(draw_states(&bp, 4, 77).unwrap(), draw_states(&bp, 4, 77).unwrap());
        assert_ne!(draw_states(&bp, 4, 77).unwrap(), draw_states(&bp, 4, 78).unwrap());
    }

    #[test]
    fn sample_moments_match() {
        let bp = path(0.0, 1.0, 1);
        let draws = draw_states(&bp, 10_000, 3).unwrap();
        let xs: Vec<f64> = draws.iter().map(|d| d[0][0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    fn local_level() -> StateSpace {
        StateSpace::time_invariant(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.5),
            vec![DVector::from_element(1, 1.0); 6],
            0.3,
            DVector::from_element(1, 0.0),
            DMatrix::from_element(1, 1, 10.0),
        )
        .unwrap()
    }

    #[test]
    fn path_draws_match_smoothed_marginals_and_lag_covariance() {
        let ss = local_level();
        let y = [Some(0.4), None, Some(1.1), None, None, Some(-0.2)];
        let fp = crate::dlm::kalman_filter(&ss, &y).unwrap();
        let sp = crate::dlm::kalman_smoother(&ss, &fp).unwrap();
        let sampler = PathSampler::new(&ss, &fp).unwrap();
        let mut rng = rng_from_seed(11);
        let n = 40_000;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| sampler.sample(&mut rng).iter().map(|v| v[0]).collect()).collect();
        let mean = |t: usize| draws.iter().map(|d| d[t]).sum::<f64>() / n as f64;
        for (t, b) in sp.beliefs.iter().enumerate() {
            let m = mean(t);
            let v = draws.iter().map(|d| (d[t] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((m - b.mean[0]).abs() < 4.0 * (b.cov[(0, 0)] / n as f64).sqrt() + 1e-9, "t={t} mean {m} vs {}", b.mean[0]);
            assert!((v / b.cov[(0, 0)] - 1.0).abs() < 0.05, "t={t} var {v} vs {}", b.cov[(0, 0)]);
        }
        // Adjacent missing states of a random walk are strongly positively correlated.
        let (m3, m4) = (mean(3), mean(4));
        let c = draws.iter().map(|d| (d[3] - m3) * (d[4] - m4)).sum::<f64>() / (n - 1) as f64;
        let r = c / (sp.beliefs[3].cov[(0, 0)] * sp.beliefs[4].cov[(0, 0)]).sqrt();
        assert!(r > 0.5, "lag correlation {r}");
    }

    #[test]
    fn invariant_state_is_constant_along_each_path() {
        let ss = StateSpace::time_invariant(
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            vec![DVector::from_element(1, 1.0); 5],
            1.0,
            DVector::zeros(1),
            DMatrix::from_element(1, 1, 100.0),
        )
        .unwrap();
        let fp = crate::dlm::kalman_filter(&ss, &[Some(1.0), None, Some(2.0), Some(0.5), None]).unwrap();
        let sampler = PathSampler::new(&ss, &fp).unwrap();
        let mut rng = rng_from_seed(2);
        for _ in 0..50 {
            let p = sampler.sample(&mut rng);
            for v in &p {
                assert!((v[0] - p[0][0]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_count_is_rejected() {
        assert!(draw_states(&path(0.0, 1.0, 1), 0, 1).is_err());
    }

    #[test]
    fn indefinite_covariance_is_clipped() {
        let belief = GaussianBelief {
            mean: DVector::zeros(2),
            cov: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
        };
        let mut rng = rng_from_seed(4);
        for _ in 0..20 {
            let x = sample_gaussian(&belief, &mut rng);
            assert!(x[1].abs() < 1e-12);
        }
    }
}
