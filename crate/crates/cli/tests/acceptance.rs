//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use ssmimpute::dlm::{kalman_filter, StateSpace};
use ssmimpute::imputers::{rubin_pool, ImputationConfig, Method};
use ssmimpute::missingness::Mechanism;
use ssmimpute::simulation::{run_grid, GridResult, GridSpec, MetricsRow, ScenarioKind, ScenarioSpec};

const REPS: usize = 100;
const LENGTH: usize = 500;
const SEED: u64 = 20_240_501;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Deterministic bounded sequence standing in for noise.
fn wobble(k: usize) -> f64 {
    ((k as f64 * 12.9898).sin() * 43_758.545_3).fract()
}

fn criterion_filter_oracle() -> Outcome {
    let (n, d, v) = (400, 5, 0.25);
    let beta = DVector::from_vec(vec![1.0, -0.5, 0.25, 2.0, -1.5]);
    let rows: Vec<DVector<f64>> = (0..n)
        .map(|t| DVector::from_fn(d, |i, _| if i == 0 { 1.0 } else { 3.0 * wobble(t * d + i) + (i as f64) }))
        .collect();
    let y: Vec<f64> = rows.iter().enumerate().map(|(t, x)| x.dot(&beta) + wobble(7919 + t) - 0.5).collect();
    let (m0, c0) = (DVector::from_element(d, 0.1), DMatrix::identity(d, d) * 10.0);
    let ss = StateSpace::time_invariant(DMatrix::identity(d, d), DMatrix::zeros(d, d), rows.clone(), v, m0.clone(), c0.clone())
        .expect("valid system");
    let obs: Vec<Option<f64>> = y.iter().copied().map(Some).collect();
    let last = kalman_filter(&ss, &obs).expect("filter").beliefs.pop().expect("non-empty");

    // Conjugate Bayesian regression with known noise variance.
    let c0_inv = c0.clone().try_inverse().expect("invertible");
    let mut prec = c0_inv.clone();
    let mut rhs = &c0_inv * &m0;
    for (x, yt) in rows.iter().zip(&y) {
        prec += x * x.transpose() / v;
        rhs += x * (*yt / v);
    }
    let cov = prec.cholesky().expect("positive definite").inverse();
    let mean = &cov * rhs;
    let (dm, dc) = ((&last.mean - &mean).amax(), (&last.cov - &cov).amax());
    outcome(dm <= 1e-8 && dc <= 1e-8, format!("max |mean diff| {dm:.2e}, max |cov diff| {dc:.2e}"))
}

fn criterion_missing_skip() -> Outcome {
    let (d, n) = (3, 60);
    let g = DMatrix::from_fn(d, d, |i, j| if i == j { 0.95 } else { 0.1 * (wobble(i * d + j) - 0.5) });
    let a = DMatrix::from_fn(d, d, |i, j| 0.3 * (wobble(100 + i * d + j) - 0.5));
    let w = &a * a.transpose();
    let missing: Vec<usize> = (0..n).filter(|t| t % 3 == 1 || t % 7 == 0).collect();
    let row = |t: usize| DVector::from_fn(d, |i, _| 2.0 * wobble(500 + t * d + i) - 1.0);
    let rows: Vec<DVector<f64>> = (0..n).map(row).collect();
    let zeroed: Vec<DVector<f64>> = (0..n).map(|t| if missing.contains(&t) { DVector::zeros(d) } else { row(t) }).collect();
    let y: Vec<f64> = (0..n).map(|t| 4.0 * wobble(900 + t) - 2.0).collect();
    let system = |rows| {
        StateSpace::time_invariant(g.clone(), w.clone(), rows, 0.5, DVector::zeros(d), DMatrix::identity(d, d) * 2.0).expect("valid")
    };
    let masked: Vec<Option<f64>> = (0..n).map(|t| (!missing.contains(&t)).then_some(y[t])).collect();
    let full: Vec<Option<f64>> = y.iter().copied().map(Some).collect();
    let skip = kalman_filter(&system(rows), &masked).expect("filter");
    let gain = kalman_filter(&system(zeroed), &full).expect("filter");
    let same = |x: &[f64], z: &[f64]| x.iter().zip(z).all(|(p, q)| p.to_bits() == q.to_bits());
    let identical = skip
        .beliefs
        .iter()
        .zip(&gain.beliefs)
        .all(|(p, q)| same(p.mean.as_slice(), q.mean.as_slice()) && same(p.cov.as_slice(), q.cov.as_slice()));
    outcome(identical, format!("{} masked of {n}; belief paths bitwise identical: {identical}", missing.len()))
}

fn grid(kind: ScenarioKind, rates: Vec<f64>, methods: Vec<Method>) -> GridSpec {
    GridSpec {
        scenarios: vec![ScenarioSpec::new(kind, LENGTH, 0)],
        mechanisms: vec![Mechanism::Mcar],
        rates,
        methods,
        reps: REPS,
        seed: SEED,
        imputation: ImputationConfig::default(),
        mechanism_slope: 1.0,
        change_point_window: 0.05,
    }
}

fn row<'a>(res: &'a GridResult, kind: ScenarioKind, rate: f64, method: Method, coef: &str, t: usize) -> &'a MetricsRow {
    res.table.row(kind.label(), Mechanism::Mcar, rate, method, coef, t).expect("cell present")
}

fn bias_text(r: &MetricsRow) -> String {
    format!(
        "bias {:+.4} (MC SE {:.4}), coverage {:.2}, reps {}",
        r.bias.unwrap_or(f64::NAN),
        r.bias_mc_se.unwrap_or(f64::NAN),
        r.coverage.unwrap_or(f64::NAN),
        r.reps
    )
}

fn within(v: Option<f64>, lo: f64, hi: f64) -> bool {
    v.is_some_and(|x| x >= lo && x <= hi)
}

fn criterion_stationary_bias(res: &GridResult) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for m in [Method::Cc, Method::Mice, Method::Ssmmp, Method::Ssmimpute] {
        let r = row(res, ScenarioKind::Stationary, 0.5, m, "beta2", LENGTH);
        let ok = r.bias.is_some_and(|b| b.abs() < 0.07) && within(r.coverage, 0.84, 0.96);
        pass &= ok;
        parts.push(format!("{m}: {}{}", bias_text(r), if ok { "" } else { " <-" }));
    }
    for m in [Method::Mean, Method::Locf, Method::Linear, Method::Spline] {
        let r = row(res, ScenarioKind::Stationary, 0.5, m, "beta2", LENGTH);
        let ok = matches!((r.bias, r.bias_mc_se), (Some(b), Some(s)) if b.abs() > 3.0 * s);
        pass &= ok;
        parts.push(format!("{m}: {}{}", bias_text(r), if ok { "" } else { " <-" }));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_efficiency(res: &GridResult) -> Outcome {
    let se_by_rep = |m: Method| -> BTreeMap<usize, Option<f64>> {
        res.raw
            .iter()
            .filter(|e| e.method == m && e.coefficient == "beta2" && e.eval_time == LENGTH)
            .map(|e| (e.rep, e.se))
            .collect()
    };
    let (imp, cc) = (se_by_rep(Method::Ssmimpute), se_by_rep(Method::Cc));
    let wins = (0..REPS)
        .filter(|k| matches!((imp.get(k).copied().flatten(), cc.get(k).copied().flatten()), (Some(a), Some(b)) if a <= b))
        .count();
    outcome(wins >= 90, format!("ssmimpute SE <= complete-case SE in {wins}/{REPS} replications"))
}

fn criterion_nonstationary_bias(res: &GridResult, mice: &GridResult) -> Outcome {
    let ns = ScenarioKind::Nonstationary;
    let imp_b2 = row(res, ns, 0.5, Method::Ssmimpute, "beta2", LENGTH);
    let imp_rho = row(res, ns, 0.5, Method::Ssmimpute, "rho", LENGTH);
    let cc_b2 = row(res, ns, 0.5, Method::Cc, "beta2", LENGTH);
    let mice_rho = row(mice, ns, 0.5, Method::Mice, "rho", LENGTH);
    let small = |r: &MetricsRow| matches!((r.bias, r.bias_mc_se), (Some(b), Some(s)) if b.abs() <= 2.0 * s);
    let checks = [
        (small(imp_b2), format!("ssmimpute beta2 {}", bias_text(imp_b2))),
        (small(imp_rho), format!("ssmimpute rho {}", bias_text(imp_rho))),
        (
            matches!((cc_b2.bias, cc_b2.bias_mc_se), (Some(b), Some(s)) if b.abs() > 3.0 * s),
            format!("cc beta2 {}", bias_text(cc_b2)),
        ),
        (mice_rho.bias.is_some_and(|b| b <= -0.1), format!("mice rho {}", bias_text(mice_rho))),
    ];
    let pass = checks.iter().all(|(ok, _)| *ok);
    let detail = checks.iter().map(|(ok, s)| format!("{s}{}", if *ok { "" } else { " <-" })).collect::<Vec<_>>().join("; ");
    outcome(pass, detail)
}

fn criterion_three_pieces(res: &GridResult) -> Outcome {
    let sc = ScenarioSpec::new(ScenarioKind::Nonstationary, LENGTH, 0);
    let mut pass = true;
    let mut parts = Vec::new();
    for (t, target) in sc.period_midpoints().into_iter().zip([-1.0, -2.0, -1.0]) {
        let r = row(res, ScenarioKind::Nonstationary, 0.5, Method::Ssmimpute, "beta1", t);
        let ok = r.mean_est.is_some_and(|m| (m - target).abs() <= 0.1) && within(r.coverage, 0.84, 0.96);
        pass &= ok;
        parts.push(format!(
            "t={t}: mean {:.4} vs {target}, coverage {:.2}{}",
            r.mean_est.unwrap_or(f64::NAN),
            r.coverage.unwrap_or(f64::NAN),
            if ok { "" } else { " <-" }
        ));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_change_points(res: &GridResult) -> Outcome {
    let summaries = |m: Method| {
        res.table.change_points.iter().filter(move |s| s.method == m && s.rate == 0.5 && s.mechanism == Mechanism::Mcar)
    };
    let joint = summaries(Method::Ssmimpute).next().and_then(|s| s.joint_hit_rate);
    let mut pass = joint.is_some_and(|j| j >= 0.8);
    let mut parts = vec![format!("ssmimpute joint hit rate {:.2}", joint.unwrap_or(f64::NAN))];
    for s in summaries(Method::Ssmimpute) {
        let cc = summaries(Method::Cc).find(|c| c.truth == s.truth).and_then(|c| c.sd_nearest);
        let ok = matches!((cc, s.sd_nearest), (Some(a), Some(b)) if a > b);
        pass &= ok;
        parts.push(format!(
            "truth {}: SD cc {:.2} vs ssmimpute {:.2}{}",
            s.truth,
            cc.unwrap_or(f64::NAN),
            s.sd_nearest.unwrap_or(f64::NAN),
            if ok { "" } else { " <-" }
        ));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_rate_stress(res: &GridResult) -> Outcome {
    let rates = [0.25, 0.5, 0.75];
    let ns = ScenarioKind::Nonstationary;
    let cc: Vec<Option<f64>> = rates.iter().map(|&r| row(res, ns, r, Method::Cc, "beta2", LENGTH).bias.map(f64::abs)).collect();
    let monotone = cc.iter().all(Option::is_some) && cc.windows(2).all(|w| w[0] <= w[1]);
    let cover: Vec<Option<f64>> = rates.iter().map(|&r| row(res, ns, r, Method::Ssmimpute, "beta2", LENGTH).coverage).collect();
    let covered = cover.iter().all(|c| within(*c, 0.82, 0.97));
    let fmt = |v: &[Option<f64>]| v.iter().map(|x| format!("{:.4}", x.unwrap_or(f64::NAN))).collect::<Vec<_>>().join(" -> ");
    outcome(
        monotone && covered,
        format!("cc |beta2 bias| {}; ssmimpute beta2 coverage {}", fmt(&cc), fmt(&cover)),
    )
}

fn criterion_rubin() -> Outcome {
    let p = rubin_pool(&[1.0, 2.0, 3.0], &[0.1, 0.1, 0.1]).expect("valid input");
    let expected = 0.1 + (1.0 + 1.0 / 3.0) * 1.0;
    let err = (p.total - expected).abs();
    outcome(err <= 1e-12 && p.mean == 2.0, format!("total {:.15} (expected {expected:.15})", p.total))
}

fn run_cli(args: &[&str], dir: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_ssmimpute"))
        .args(args)
        .current_dir(dir)
        .env_remove("SSMIMPUTE_THREADS")
        .status()
        .is_ok_and(|s| s.success())
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap_or_default()))
                .collect()
        })
        .unwrap_or_default()
}

fn criterion_reproducibility() -> Outcome {
    let tmp = tempfile::TempDir::new().expect("temp dir");
    let dir = tmp.path();
    let cfg = r#"{"scenario": {"kind": "nonstationary", "length": 200},
        "mechanism": {"kind": "mcar", "target_rate": 0.5},
        "model": {"outcome_lags": 1, "exposure_lags": 1,
                  "dynamics": {"intercept": {"kind": "random_walk"}, "a": {"kind": "periodic_stable"}}},
        "imputation": {"r": 5},
        "grid": {"scenarios": [{"kind": "nonstationary", "length": 200}], "mechanisms": ["mcar"], "rates": [0.5],
                 "methods": ["cc", "mice", "ssmimpute"], "reps": 3, "imputation": {"r": 3}}}"#;
    std::fs::write(dir.join("cfg.json"), cfg).expect("write config");
    let mut ok = true;
    for round in ["a", "b"] {
        let o = |name: &str| format!("{name}_{round}");
        ok &= run_cli(&["simulate", "--config", "cfg.json", "--seed", "9", "--out", &o("sim")], dir);
        let data = format!("{}/data.csv", o("sim"));
        ok &= run_cli(&["mask", "--config", "cfg.json", "--seed", "9", "--data", &data, "--out", &o("mask")], dir);
        let masked = format!("{}/masked.csv", o("mask"));
        for m in Method::ALL {
            ok &= run_cli(
                &["impute", "--config", "cfg.json", "--seed", "9", "--data", &masked, "--method", m.label(), "--out", &o(m.label())],
                dir,
            );
        }
        ok &= run_cli(&["fit", "--config", "cfg.json", "--data", &data, "--out", &o("fit")], dir);
        ok &= run_cli(&["evaluate", "--config", "cfg.json", "--seed", "9", "--out", &o("eval")], dir);
    }
    let mut names: Vec<&str> = vec!["sim", "mask", "fit", "eval"];
    names.extend(Method::ALL.iter().map(|m| m.label()));
    let mut csvs = 0;
    let mut differing = Vec::new();
    for name in names {
        let (a, b) = (snapshot(&dir.join(format!("{name}_a"))), snapshot(&dir.join(format!("{name}_b"))));
        csvs += a.keys().filter(|k| k.ends_with(".csv")).count();
        if a.is_empty() || a != b {
            differing.push(name);
        }
    }
    outcome(
        ok && differing.is_empty(),
        format!("all commands succeeded: {ok}; {csvs} CSVs compared; differing outputs: {differing:?}"),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |k: usize, name: &'static str, o: Outcome| {
        println!("{} criterion {k:>2} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((k, name, o));
    };
    report(1, "filter oracle", criterion_filter_oracle());
    report(2, "missing-skip exactness", criterion_missing_skip());

    let start = Instant::now();
    let stationary = run_grid(&grid(ScenarioKind::Stationary, vec![0.5], Method::ALL.to_vec())).expect("stationary grid");
    eprintln!("stationary grid: {:.0} s", start.elapsed().as_secs_f64());
    report(3, "stationary unbiasedness", criterion_stationary_bias(&stationary));
    report(4, "efficiency ordering", criterion_efficiency(&stationary));

    let start = Instant::now();
    let ns = run_grid(&grid(ScenarioKind::Nonstationary, vec![0.25, 0.5, 0.75], vec![Method::Cc, Method::Ssmimpute]))
        .expect("non-stationary grid");
    let mice = run_grid(&grid(ScenarioKind::Nonstationary, vec![0.5], vec![Method::Mice])).expect("mice grid");
    eprintln!("non-stationary grids: {:.0} s", start.elapsed().as_secs_f64());
    report(5, "non-stationary bias separation", criterion_nonstationary_bias(&ns, &mice));
    report(6, "three-piece recovery", criterion_three_pieces(&ns));
    report(7, "change-point recovery", criterion_change_points(&ns));
    report(8, "missing-rate stress", criterion_rate_stress(&ns));
    report(9, "Rubin pooling exactness", criterion_rubin());
    report(10, "reproducibility", criterion_reproducibility());

    let failed: Vec<usize> = results.iter().filter(|(_, _, o)| !o.pass).map(|(k, _, _)| *k).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {failed:?}");
        ExitCode::FAILURE
    }
}
