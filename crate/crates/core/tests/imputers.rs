use ssmimpute::design::{build_design, realize_state_space, splice_complete_cases, ModelSpec, TimeSeriesDataset};
use ssmimpute::dlm::kalman_filter;
use ssmimpute::imputers::{fit_model, run_method, ssm_impute, ssm_mp, FitSettings, ImputationConfig, Method};
use ssmimpute::linalg::min_eigenvalue;
use ssmimpute::missingness::{apply_mechanism, Mechanism, MechanismSpec};
use ssmimpute::simulation::{generate_scenario, ScenarioKind, ScenarioSpec};

const ALL_METHODS: [Method; 9] = [
    Method::Cc,
    Method::Mean,
    Method::Locf,
    Method::Linear,
    Method::Spline,
    Method::Mice,
    Method::Ar,
    Method::Ssmmp,
    Method::Ssmimpute,
];

fn stationary(length: usize, seed: u64) -> (TimeSeriesDataset, ModelSpec) {
    let sc = ScenarioSpec::new(ScenarioKind::Stationary, length, seed);
    (generate_scenario(&sc).unwrap().0, sc.model_spec())
}

fn masked(ds: &TimeSeriesDataset, rate: f64, seed: u64) -> TimeSeriesDataset {
    apply_mechanism(ds, &MechanismSpec::new(Mechanism::Mcar, rate, seed)).unwrap()
}

fn cfg(seed: u64) -> ImputationConfig {
    ImputationConfig { r: 5, seed, ..Default::default() }
}

#[test]
fn fully_observed_data_reduce_to_a_single_fit() {
    let (ds, spec) = stationary(200, 1);
    let dm = build_design(&ds, &spec, None).unwrap();
    let plain = fit_model(&spec, &dm, &[], &FitSettings::default()).unwrap();
    let paths = plain.paths();
    for method in [Method::Ssmmp, Method::Ssmimpute] {
        let res = run_method(method, &ds, &spec, &cfg(3)).unwrap();
        assert_eq!(res.trace.len(), 1, "{method}");
        for (i, name) in paths.names.iter().enumerate() {
            for t in 0..ds.len() {
                let p = res.pooled.get(name, t).unwrap();
                assert!((p.mean - paths.means[i][t]).abs() < 1e-10, "{method} {name} t={t}");
                assert!((p.total - paths.vars[i][t]).abs() < 1e-10, "{method} {name} t={t}");
            }
        }
    }
}

#[test]
fn observed_outcomes_pass_through_every_method() {
    let (full, spec) = stationary(150, 2);
    let ds = masked(&full, 0.3, 5);
    for method in ALL_METHODS {
        let res = run_method(method, &ds, &spec, &cfg(4)).unwrap();
        for series in &res.completed_outcomes {
            for (obs, v) in ds.y().iter().zip(series) {
                if let Some(o) = obs {
                    assert_eq!(o.to_bits(), v.to_bits(), "{method}");
                }
            }
        }
    }
}

#[test]
fn iterative_imputers_are_reproducible() {
    let (full, spec) = stationary(150, 3);
    let ds = masked(&full, 0.4, 6);
    for method in [Method::Ssmmp, Method::Ssmimpute, Method::Mice] {
        let a = run_method(method, &ds, &spec, &cfg(9)).unwrap();
        let b = run_method(method, &ds, &spec, &cfg(9)).unwrap();
        assert_eq!(a.completed_outcomes, b.completed_outcomes, "{method}");
        assert_eq!(a.pooled, b.pooled, "{method}");
        // Debug text, since the first trace entry carries NaN changes.
        assert_eq!(format!("{:?}", a.trace), format!("{:?}", b.trace), "{method}");
    }
}

#[test]
fn draw_count_changes_pooled_means_only_by_imputation_noise() {
    let (full, spec) = stationary(300, 4);
    let ds = masked(&full, 0.5, 7);
    let small = ssm_mp(&ds, &spec, &ImputationConfig { r: 2, seed: 1, ..Default::default() }).unwrap();
    let large = ssm_mp(&ds, &spec, &ImputationConfig { r: 20, seed: 1, ..Default::default() }).unwrap();
    let t = ds.len() - 1;
    for name in large.pooled.names() {
        let (a, b) = (small.pooled.get(name, t).unwrap(), large.pooled.get(name, t).unwrap());
        // Monte Carlo spread of a two-draw mean, with a floor for the
        // between-variance estimate being near zero.
        let bound = 2.0 * (b.between / 2.0).sqrt() + 0.25 * b.se();
        assert!((a.mean - b.mean).abs() <= bound, "{name}: {} vs {} (bound {bound})", a.mean, b.mean);
    }
}

#[test]
fn both_ssm_imputers_agree_up_to_sampling_noise() {
    for seed in 0..3 {
        let (full, spec) = stationary(300, 10 + seed);
        let ds = masked(&full, 0.5, 20 + seed);
        let mp = ssm_mp(&ds, &spec, &cfg(seed)).unwrap();
        let imp = ssm_impute(&ds, &spec, &cfg(seed)).unwrap();
        let t = ds.len() - 1;
        for name in mp.pooled.names() {
            let (a, b) = (mp.pooled.get(name, t).unwrap(), imp.pooled.get(name, t).unwrap());
            assert!((a.mean - b.mean).abs() <= 3.0 * a.se().max(b.se()), "seed {seed} {name}: {} vs {}", a.mean, b.mean);
        }
    }
}

#[test]
fn imputation_is_at_least_as_precise_as_complete_cases() {
    for seed in 0..5 {
        let (full, spec) = stationary(300, 30 + seed);
        let ds = masked(&full, 0.3, 40 + seed);
        let imp = ssm_impute(&ds, &spec, &cfg(seed)).unwrap();
        // Complete cases under the same structural parameters.
        let dm = build_design(&ds, &spec, None).unwrap();
        let spliced = splice_complete_cases(&ds, &dm).unwrap();
        let ss = realize_state_space(&imp.spec, &spliced.design, &imp.params).unwrap();
        let cc = kalman_filter(&ss, spliced.design.response()).unwrap().beliefs.pop().unwrap().cov;
        let diff = &cc - &imp.terminal_state_cov;
        assert!(min_eigenvalue(&diff) >= -1e-8 * cc.amax().max(1.0), "seed {seed}: {}", min_eigenvalue(&diff));
    }
}
