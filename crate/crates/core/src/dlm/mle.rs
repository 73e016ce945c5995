use serde::{Deserialize, Serialize};

use super::{log_likelihood, StateSpace};
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, SimplexOptions};

const LOG_BOUNDS: (f64, f64) = (-30.0, 20.0);

/// Named positive scalars entering `W_t` and `V_t`, stored on the log scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralParams {
    names: Vec<String>,
    log_values: Vec<f64>,
}

impl StructuralParams {
    /// Build from natural-scale values, which must be positive and finite.
    pub fn new(names: Vec<String>, values: &[f64]) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::Contract("parameter names and values differ in length".into()));
        }
        if let Some((name, v)) = names.iter().zip(values).find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Contract(format!("structural parameter {name} must be positive, got {v}")));
        }
        Ok(Self { names, log_values: values.iter().map(|v| v.ln()).collect() })
    }

    pub fn from_log(names: Vec<String>, log_values: Vec<f64>) -> Result<Self> {
        if names.len() != log_values.len() {
            return Err(Error::Contract("parameter names and values differ in length".into()));
        }
        if log_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("log-parameters must be finite".into()));
        }
        Ok(Self { names, log_values })
    }

    pub fn empty() -> Self {
        Self { names: Vec::new(), log_values: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    pub fn values(&self) -> Vec<f64> {
        self.log_values.iter().map(|v| v.exp()).collect()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.log_values[i].exp())
    }

    fn with_log_values(&self, log_values: &[f64]) -> Self {
        Self { names: self.names.clone(), log_values: log_values.to_vec() }
    }

    /// Largest relative change in natural-scale values against `other`.
    /// Parameters present in only one of the two sets count as a full change.
    pub fn max_rel_change(&self, other: &StructuralParams) -> f64 {
        let mut worst: f64 = 0.0;
        for (name, lv) in self.names.iter().zip(&self.log_values) {
            match other.get(name) {
                Some(ov) => {
                    let v = lv.exp();
                    worst = worst.max((v - ov).abs() / v.abs().max(ov.abs()).max(f64::MIN_POSITIVE));
                }
                None => worst = worst.max(1.0),
            }
        }
        if other.names.iter().any(|n| self.get(n).is_none()) {
            worst = worst.max(1.0);
        }
        worst
    }
}

/// Settings for [`fit_structural_params`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Number of simplex runs; starts are spread symmetrically around the initial point.
    pub restarts: usize,
    /// Offset (log scale) between successive starting points.
    pub spread: f64,
    pub simplex: SimplexOptions,
    /// Minimum number of observed outcomes required for a fit.
    pub min_observed: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { restarts: 3, spread: 2.0, simplex: SimplexOptions::default(), min_observed: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct MleFit {
    pub params: StructuralParams,
    pub loglik: f64,
    pub converged: bool,
    pub evals: usize,
}

/// Maximise the innovation log-likelihood over the log-parameters by
/// Nelder–Mead, restarted from `opts.restarts` starting points. `build` maps a
/// parameter vector onto a realized system.
///
/// Non-convergence is not an error: the best point found is returned with
/// `converged = false`.
pub fn fit_structural_params<B>(
    build: B,
    init: &StructuralParams,
    y: &[Option<f64>],
    opts: &FitOptions,
) -> Result<MleFit>
where
    B: Fn(&StructuralParams) -> Result<StateSpace>,
{
    let observed = y.iter().filter(|v| v.is_some()).count();
    if observed == 0 {
        return Err(Error::Contract("cannot fit structural parameters to an all-missing outcome".into()));
    }
    if observed < opts.min_observed {
        return Err(Error::InsufficientData(format!(
            "{observed} observed outcomes, at least {} required",
            opts.min_observed
        )));
    }

    let objective = |lv: &[f64]| -> f64 {
        let clamped: Vec<f64> = lv.iter().map(|v| v.clamp(LOG_BOUNDS.0, LOG_BOUNDS.1)).collect();
        let penalty: f64 = lv.iter().zip(&clamped).map(|(a, b)| (a - b).powi(2)).sum();
        match build(&init.with_log_values(&clamped)).and_then(|ss| log_likelihood(&ss, y)) {
            Ok(ll) if ll.is_finite() => -ll + penalty,
            _ => f64::INFINITY,
        }
    };

    if init.is_empty() {
        let ll = -objective(&[]);
        if !ll.is_finite() {
            // Surface the underlying filter error.
            let ss = build(init)?;
            log_likelihood(&ss, y)?;
        }
        return Ok(MleFit { params: init.clone(), loglik: ll, converged: true, evals: 1 });
    }

    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    let mut evals = 0;
    for k in 0..opts.restarts.max(1) {
        // 0, -s, +s, -2s, +2s, ...
        let offset = match k {
            0 => 0.0,
            k if k % 2 == 1 => -opts.spread * k.div_ceil(2) as f64,
            k => opts.spread * (k / 2) as f64,
        };
        let start: Vec<f64> = init.log_values.iter().map(|v| v + offset).collect();
        let res = nelder_mead(objective, &start, &opts.simplex);
        evals += res.evals;
        let better = match &best {
            None => true,
            Some((_, v, _)) => res.value < *v,
        };
        if better {
            best = Some((res.x, res.value, res.converged));
        }
    }
    let (x, value, converged) = best.expect("at least one restart");
    if !value.is_finite() {
        let ss = build(init)?;
        log_likelihood(&ss, y)?;
        return Err(Error::Numerical { t: 0, msg: "likelihood is not finite anywhere on the search path".into() });
    }
    let clamped: Vec<f64> = x.iter().map(|v| v.clamp(LOG_BOUNDS.0, LOG_BOUNDS.1)).collect();
    let params = init.with_log_values(&clamped);
    let build_ll = log_likelihood(&build(&params)?, y)?;
    Ok(MleFit { params, loglik: build_ll, converged, evals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use nalgebra::{DMatrix, DVector};
    use rand_distr::{Distribution, StandardNormal};

    fn constant_level(n: usize) -> impl Fn(&StructuralParams) -> Result<StateSpace> {
        move |p: &StructuralParams| {
            StateSpace::time_invariant(
                DMatrix::identity(1, 1),
                DMatrix::zeros(1, 1),
                vec![DVector::from_element(1, 1.0); n],
                p.get("v").unwrap(),
                DVector::zeros(1),
                DMatrix::from_element(1, 1, 1e4),
            )
        }
    }

    fn simulate(n: usize, seed: u64) -> Vec<Option<f64>> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                Some(3.0 + z)
            })
            .collect()
    }

    #[test]
    fn observation_variance_is_consistent() {
        let y = simulate(2000, 11);
        let init = StructuralParams::new(vec!["v".into()], &[0.3]).unwrap();
        let fit = fit_structural_params(constant_level(2000), &init, &y, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.params.len(), 1);
        let v = fit.params.get("v").unwrap();
        assert!((v - 1.0).abs() < 0.15, "v = {v}");
    }

    #[test]
    fn restarts_from_opposite_sides_agree() {
        let y = simulate(500, 5);
        let single = FitOptions { restarts: 1, ..Default::default() };
        let lo = StructuralParams::from_log(vec!["v".into()], vec![-2.0]).unwrap();
        let hi = StructuralParams::from_log(vec!["v".into()], vec![2.0]).unwrap();
        let a = fit_structural_params(constant_level(500), &lo, &y, &single).unwrap();
        let b = fit_structural_params(constant_level(500), &hi, &y, &single).unwrap();
        let (va, vb) = (a.params.get("v").unwrap(), b.params.get("v").unwrap());
        assert!((va - vb).abs() / va < 1e-3, "{va} vs {vb}");
    }

    #[test]
    fn loglik_drops_away_from_the_optimum() {
        let y = simulate(400, 9);
        let init = StructuralParams::new(vec!["v".into()], &[1.0]).unwrap();
        let fit = fit_structural_params(constant_level(400), &init, &y, &FitOptions::default()).unwrap();
        let v = fit.params.get("v").unwrap();
        for factor in [0.9, 1.1] {
            let p = StructuralParams::new(vec!["v".into()], &[v * factor]).unwrap();
            let ll = log_likelihood(&constant_level(400)(&p).unwrap(), &y).unwrap();
            assert!(ll < fit.loglik);
        }
    }

    #[test]
    fn all_missing_is_contract_error() {
        let init = StructuralParams::new(vec!["v".into()], &[1.0]).unwrap();
        let err = fit_structural_params(constant_level(3), &init, &[None; 3], &FitOptions::default());
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn too_few_observations_is_insufficient_data() {
        let init = StructuralParams::new(vec!["v".into()], &[1.0]).unwrap();
        let y = vec![Some(1.0); 5];
        let err = fit_structural_params(constant_level(5), &init, &y, &FitOptions::default());
        assert!(matches!(err, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn rel_change_detects_new_parameters() {
        let a = StructuralParams::new(vec!["v".into()], &[1.0]).unwrap();
        let b = StructuralParams::new(vec!["v".into(), "w".into()], &[1.0, 2.0]).unwrap();
        assert_eq!(a.max_rel_change(&a), 0.0);
        assert_eq!(a.max_rel_change(&b), 1.0);
    }
}
