use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use ssmimpute::dlm::{kalman_filter, kalman_smoother, log_likelihood, StateSpace};
use ssmimpute::linalg::psd_leq;
use ssmimpute::rng::rng_from_seed;

fn regression(n: usize, d: usize, seed: u64) -> (Vec<DVector<f64>>, Vec<f64>) {
    let mut rng = rng_from_seed(seed);
    let beta = DVector::from_fn(d, |i, _| i as f64 - 1.5);
    let rows: Vec<DVector<f64>> = (0..n)
        .map(|_| DVector::from_fn(d, |i, _| if i == 0 { 1.0 } else { rng.sample::<f64, _>(StandardNormal) * 2.0 + 1.0 }))
        .collect();
    let y = rows.iter().map(|x| x.dot(&beta) + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    (rows, y)
}

/// Closed-form posterior of a Bayesian linear regression with known noise
/// variance and a Gaussian prior.
fn conjugate_posterior(rows: &[DVector<f64>], y: &[f64], v: f64, m0: &DVector<f64>, c0: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let d = m0.len();
    let prior_prec = c0.clone().try_inverse().unwrap();
    let mut prec = prior_prec.clone();
    let mut rhs = &prior_prec * m0;
    for (x, yi) in rows.iter().zip(y) {
        prec += x * x.transpose() / v;
        rhs += x * (*yi / v);
    }
    let cov = prec.cholesky().unwrap().inverse();
    let mean = &cov * rhs;
    assert_eq!(cov.nrows(), d);
    (mean, cov)
}

fn static_system(rows: Vec<DVector<f64>>, v: f64) -> StateSpace {
    let d = rows[0].len();
    StateSpace::time_invariant(
        DMatrix::identity(d, d),
        DMatrix::zeros(d, d),
        rows,
        v,
        DVector::from_element(d, 0.5),
        DMatrix::identity(d, d) * 4.0,
    )
    .unwrap()
}

#[test]
fn static_filter_matches_conjugate_regression() {
    let (rows, y) = regression(300, 5, 1);
    let ss = static_system(rows.clone(), 0.09);
    let obs: Vec<Option<f64>> = y.iter().copied().map(Some).collect();
    let path = kalman_filter(&ss, &obs).unwrap();
    let (mean, cov) = conjugate_posterior(&rows, &y, 0.09, ss.m0(), ss.c0());
    let last = path.beliefs.last().unwrap();
    assert!((&last.mean - &mean).amax() < 1e-8, "{}", (&last.mean - &mean).amax());
    assert!((&last.cov - &cov).amax() < 1e-8, "{}", (&last.cov - &cov).amax());
}

#[test]
fn static_filter_with_gaps_matches_regression_on_observed_rows() {
    let (rows, y) = regression(200, 3, 2);
    let ss = static_system(rows.clone(), 0.09);
    let obs: Vec<Option<f64>> = y.iter().enumerate().map(|(t, v)| (t % 3 != 1).then_some(*v)).collect();
    let kept: Vec<usize> = (0..y.len()).filter(|t| t % 3 != 1).collect();
    let (mean, cov) = conjugate_posterior(
        &kept.iter().map(|&t| rows[t].clone()).collect::<Vec<_>>(),
        &kept.iter().map(|&t| y[t]).collect::<Vec<_>>(),
        0.09,
        ss.m0(),
        ss.c0(),
    );
    let last = kalman_filter(&ss, &obs).unwrap().beliefs.pop().unwrap();
    assert!((&last.mean - &mean).amax() < 1e-8);
    assert!((&last.cov - &cov).amax() < 1e-8);
}

/// A random-walk system whose transition mixes the states.
fn dynamic_system(d: usize, n: usize, seed: u64, zero_rows: &[usize]) -> StateSpace {
    let mut rng = rng_from_seed(seed);
    let g = DMatrix::from_fn(d, d, |i, j| if i == j { 0.9 } else { 0.05 * rng.sample::<f64, _>(StandardNormal) });
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.3);
    let w = &a * a.transpose();
    let rows = (0..n)
        .map(|t| {
            let row = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            if zero_rows.contains(&t) {
                DVector::zeros(d)
            } else {
                row
            }
        })
        .collect();
    StateSpace::time_invariant(g, w, rows, 0.5, DVector::zeros(d), DMatrix::identity(d, d) * 2.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// A missing outcome gives the same path as a zero observation row, the
    /// construction under which the gain vanishes.
    #[test]
    fn missing_skip_equals_zero_gain_construction(
        seed in any::<u64>(),
        d in 1usize..5,
        missing in proptest::collection::btree_set(0usize..40, 0..15),
    ) {
        let missing: Vec<usize> = missing.into_iter().collect();
        let skip = dynamic_system(d, 40, seed, &[]);
        let zeroed = dynamic_system(d, 40, seed, &missing);
        let mut rng = rng_from_seed(seed ^ 1);
        let y: Vec<f64> = (0..40).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let masked: Vec<Option<f64>> = y.iter().enumerate().map(|(t, v)| (!missing.contains(&t)).then_some(*v)).collect();
        let full: Vec<Option<f64>> = y.iter().copied().map(Some).collect();
        // Rows other than the masked ones agree between the two systems.
        let a = kalman_filter(&skip, &masked).unwrap();
        let b = kalman_filter(&zeroed, &full).unwrap();
        for t in 0..40 {
            let (ba, bb) = (&a.beliefs[t], &b.beliefs[t]);
            prop_assert!(ba.mean.iter().zip(bb.mean.iter()).all(|(x, y)| x.to_bits() == y.to_bits()), "mean differs at {t}");
            prop_assert!(ba.cov.iter().zip(bb.cov.iter()).all(|(x, y)| x.to_bits() == y.to_bits()), "cov differs at {t}");
        }
    }

    #[test]
    fn an_extra_observation_never_inflates_a_static_posterior(seed in any::<u64>(), d in 1usize..6) {
        let (rows, y) = regression(60, d, seed);
        let ss = static_system(rows, 0.2);
        let obs: Vec<Option<f64>> = y.iter().enumerate().map(|(t, v)| (t % 4 != 0).then_some(*v)).collect();
        let path = kalman_filter(&ss, &obs).unwrap();
        let mut prev = ss.c0().clone();
        for b in &path.beliefs {
            prop_assert!(psd_leq(&b.cov, &prev, 1e-10));
            prev = b.cov.clone();
        }
    }

    #[test]
    fn smoothing_never_inflates_the_filtered_covariance(
        seed in any::<u64>(),
        d in 1usize..5,
        missing in proptest::collection::btree_set(0usize..50, 0..25),
    ) {
        let ss = dynamic_system(d, 50, seed, &[]);
        let mut rng = rng_from_seed(seed ^ 2);
        let y: Vec<Option<f64>> = (0..50).map(|t| (!missing.contains(&t)).then(|| rng.sample::<f64, _>(StandardNormal))).collect();
        let filtered = kalman_filter(&ss, &y).unwrap();
        let smoothed = kalman_smoother(&ss, &filtered).unwrap();
        for (s, c) in smoothed.beliefs.iter().zip(&filtered.beliefs) {
            prop_assert!(psd_leq(&s.cov, &c.cov, 1e-10));
        }
        let last = filtered.beliefs.len() - 1;
        prop_assert_eq!(&smoothed.beliefs[last], &filtered.beliefs[last]);
    }

    #[test]
    fn likelihood_only_pass_agrees_with_the_filter(seed in any::<u64>()) {
        let ss = dynamic_system(2, 30, seed, &[]);
        let mut rng = rng_from_seed(seed);
        let y: Vec<Option<f64>> = (0..30).map(|t| (t % 5 != 2).then(|| rng.sample::<f64, _>(StandardNormal))).collect();
        let a = log_likelihood(&ss, &y).unwrap();
        let b = kalman_filter(&ss, &y).unwrap().loglik;
        prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}
