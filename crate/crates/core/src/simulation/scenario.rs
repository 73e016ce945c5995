use std::io::Write;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::design::{Dynamics, ModelSpec, NamedSeries, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::io::format_value;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// All coefficients constant.
    Stationary,
    /// Random-walk intercept and a three-piece exposure effect.
    Nonstationary,
}

impl ScenarioKind {
    pub fn label(self) -> &'static str {
        match self {
            ScenarioKind::Stationary => "stationary",
            ScenarioKind::Nonstationary => "nonstationary",
        }
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Stationary AR(1) generator for an exogenous series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exogenous {
    pub mean: f64,
    #[serde(default = "default_autocorrelation")]
    pub autocorrelation: f64,
    #[serde(default = "default_unit")]
    pub variance: f64,
}

fn default_autocorrelation() -> f64 {
    0.3
}
fn default_unit() -> f64 {
    1.0
}
fn default_length() -> usize {
    500
}
fn default_noise() -> f64 {
    0.1
}
fn default_burn_in() -> usize {
    50
}
fn default_exposure() -> Exogenous {
    Exogenous { mean: 10.0, autocorrelation: 0.3, variance: 4.0 }
}
fn default_covariate() -> Exogenous {
    Exogenous { mean: 12.0, autocorrelation: 0.3, variance: 4.0 }
}

/// Names of the generating coefficients, in design order.
pub const TRUTH_NAMES: [&str; 5] = ["beta0", "rho", "beta1", "beta2", "betac"];
/// Design coefficient matching each entry of [`TRUTH_NAMES`].
pub const DESIGN_NAMES: [&str; 5] = ["intercept", "y_lag1", "a", "a_lag1", "c"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Label used in output tables; defaults to the kind.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_length")]
    pub length: usize,
    #[serde(default = "default_noise")]
    pub noise_variance: f64,
    /// Innovation variance of the random-walk intercept (non-stationary only).
    #[serde(default = "default_unit")]
    pub intercept_step_variance: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_exposure")]
    pub exposure: Exogenous,
    #[serde(default = "default_covariate")]
    pub covariate: Exogenous,
    /// Last time (1-based) of each exposure-effect period; defaults to 40% and
    /// 70% of the length.
    #[serde(default)]
    pub change_points: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, length: usize, seed: u64) -> Self {
        Self {
            kind,
            name: None,
            length,
            noise_variance: default_noise(),
            intercept_step_variance: default_unit(),
            burn_in: default_burn_in(),
            exposure: default_exposure(),
            covariate: default_covariate(),
            change_points: None,
            seed,
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.label().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < 100 {
            return Err(Error::Config(format!("scenario length must be at least 100, got {}", self.length)));
        }
        if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::Config("noise_variance must be positive".into()));
        }
        if !(self.intercept_step_variance >= 0.0) {
            return Err(Error::Config("intercept_step_variance must be non-negative".into()));
        }
        for g in [&self.exposure, &self.covariate] {
            if !(g.autocorrelation.abs() < 1.0 && g.variance > 0.0 && g.mean.is_finite()) {
                return Err(Error::Config("exogenous generators need |autocorrelation| < 1 and positive variance".into()));
            }
        }
        let cps = self.period_ends();
        if cps.windows(2).any(|w| w[0] >= w[1]) || cps.iter().any(|&c| c == 0 || c >= self.length) {
            return Err(Error::Config(format!("change points must be increasing inside (0, {})", self.length)));
        }
        Ok(())
    }

    /// Last 1-based time of each exposure-effect period but the final one.
    pub fn period_ends(&self) -> Vec<usize> {
        match (&self.change_points, self.kind) {
            (Some(c), _) => c.clone(),
            (None, ScenarioKind::Nonstationary) => {
                vec![(self.length as f64 * 0.4).round() as usize, (self.length as f64 * 0.7).round() as usize]
            }
            (None, ScenarioKind::Stationary) => Vec::new(),
        }
    }

    /// Midpoint (1-based) of each exposure-effect period.
    pub fn period_midpoints(&self) -> Vec<usize> {
        let mut bounds = vec![0];
        bounds.extend(self.period_ends());
        bounds.push(self.length);
        bounds.windows(2).map(|w| (w[0] + 1 + w[1]) / 2).collect()
    }

    /// Evaluation times (1-based) per truth coefficient. The periodic exposure
    /// effect is read at the last time of each period, at each period's
    /// midpoint and at the end.
    pub fn evaluation_times(&self) -> Vec<(&'static str, Vec<usize>)> {
        TRUTH_NAMES
            .iter()
            .map(|&name| {
                let times = if name == "beta1" && self.kind == ScenarioKind::Nonstationary {
                    let mut t = self.period_ends();
                    t.extend(self.period_midpoints());
                    t.push(self.length);
                    t.sort_unstable();
                    t.dedup();
                    t
                } else {
                    vec![self.length]
                };
                (name, times)
            })
            .collect()
    }

    /// The declaration handed to the methods: the true dynamics class with
    /// change points left to be learned.
    pub fn model_spec(&self) -> ModelSpec {
        let spec = ModelSpec::new(1, 1, 0);
        match self.kind {
            ScenarioKind::Stationary => spec,
            ScenarioKind::Nonstationary => spec
                .with_dynamics("intercept", Dynamics::RandomWalk { variance: None })
                .with_dynamics("a", Dynamics::PeriodicStable { change_points: None }),
        }
    }
}

/// Coefficient paths, noises and start values that generated a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTruth {
    /// `[coefficient][t]` in [`TRUTH_NAMES`] order.
    pub coefficients: Vec<Vec<f64>>,
    pub noise: Vec<f64>,
    pub outcome: Vec<f64>,
    /// Outcome and exposure at time 0, feeding the first lagged terms.
    pub initial_outcome: f64,
    pub initial_exposure: f64,
    pub change_points: Vec<usize>,
}

impl ScenarioTruth {
    pub fn coefficient(&self, name: &str) -> Option<&[f64]> {
        TRUTH_NAMES.iter().position(|n| *n == name).map(|i| self.coefficients[i].as_slice())
    }

    /// Truth CSV: `t` plus one column per coefficient.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let mut header = vec!["t"];
        header.extend(TRUTH_NAMES);
        w.write_record(&header)?;
        for t in 0..self.outcome.len() {
            let mut rec = vec![(t + 1).to_string()];
            rec.extend(self.coefficients.iter().map(|c| format_value(c[t])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Ar1 {
    mean: f64,
    phi: f64,
    step: Normal<f64>,
    state: f64,
}

impl Ar1 {
    fn new<R: rand::Rng>(g: &Exogenous, rng: &mut R) -> Self {
        let sd = g.variance.sqrt();
        let start: f64 = Normal::new(0.0, sd).expect("sd").sample(rng);
        let step = Normal::new(0.0, (g.variance * (1.0 - g.autocorrelation.powi(2))).sqrt()).expect("sd");
        Self { mean: g.mean, phi: g.autocorrelation, step, state: start }
    }

    fn next<R: rand::Rng>(&mut self, rng: &mut R) -> f64 {
        self.state = self.phi * self.state + self.step.sample(rng);
        self.mean + self.state
    }
}

/// Simulate a scenario. The outcome starts at the stationary mean implied by
/// the initial coefficients and runs `burn_in` discarded steps first.
pub fn generate_scenario(sc: &ScenarioSpec) -> Result<(TimeSeriesDataset, ScenarioTruth)> {
    sc.validate()?;
    let mut rng = rng_from_seed(sc.seed);
    let n = sc.length;
    let (rho, beta2, betac) = (0.5, -0.5, -1.0);
    let ends = sc.period_ends();
    let beta1_at = |t: usize| -> f64 {
        match sc.kind {
            ScenarioKind::Stationary => -1.5,
            ScenarioKind::Nonstationary => {
                let period = ends.iter().filter(|&&e| t > e).count();
                if period % 2 == 1 {
                    -2.0
                } else {
                    -1.0
                }
            }
        }
    };
    let mut exposure = Ar1::new(&sc.exposure, &mut rng);
    let mut covariate = Ar1::new(&sc.covariate, &mut rng);
    let noise = Normal::new(0.0, sc.noise_variance.sqrt()).expect("noise sd");
    let step = Normal::new(0.0, sc.intercept_step_variance.sqrt()).expect("step sd");

    let intercept0 = 40.0;
    let b1 = beta1_at(1);
    let mut y_prev =
        (intercept0 + (b1 + beta2) * sc.exposure.mean + betac * sc.covariate.mean) / (1.0 - rho);
    let mut a_prev = exposure.next(&mut rng);
    for _ in 0..sc.burn_in {
        let a = exposure.next(&mut rng);
        let c = covariate.next(&mut rng);
        y_prev = intercept0 + rho * y_prev + b1 * a + beta2 * a_prev + betac * c + noise.sample(&mut rng);
        a_prev = a;
    }
    let (initial_outcome, initial_exposure) = (y_prev, a_prev);

    let mut coefficients = vec![Vec::with_capacity(n); 5];
    let (mut ys, mut a_s, mut c_s, mut vs) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut intercept = intercept0;
    for t in 1..=n {
        if sc.kind == ScenarioKind::Nonstationary {
            intercept += step.sample(&mut rng);
        }
        let a = exposure.next(&mut rng);
        let c = covariate.next(&mut rng);
        let v = noise.sample(&mut rng);
        let b1 = beta1_at(t);
        let y = intercept + rho * y_prev + b1 * a + beta2 * a_prev + betac * c + v;
        for (slot, value) in coefficients.iter_mut().zip([intercept, rho, b1, beta2, betac]) {
            slot.push(value);
        }
        ys.push(y);
        a_s.push(a);
        c_s.push(c);
        vs.push(v);
        y_prev = y;
        a_prev = a;
    }
    let ds = TimeSeriesDataset::new(
        ys.iter().map(|v| Some(*v)).collect(),
        vec![NamedSeries::new("a", a_s)],
        vec![NamedSeries::new("c", c_s)],
    )?
    .with_truth(ys.clone())?;
    let truth = ScenarioTruth {
        coefficients,
        noise: vs,
        outcome: ys,
        initial_outcome,
        initial_exposure,
        change_points: if sc.kind == ScenarioKind::Nonstationary { ends } else { Vec::new() },
    };
    Ok((ds, truth))
}
