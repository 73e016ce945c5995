use nalgebra::{DMatrix, DVector};

use super::{DesignMatrix, Dynamics, ModelSpec};
use crate::dlm::{Schedule, StateSpace, StructuralParams, DEFAULT_PRIOR_VARIANCE};
use crate::error::{Error, Result};

/// Name of the observation-variance entry in [`StructuralParams`].
pub const OBS_VARIANCE_PARAM: &str = "obs_variance";

/// Jump variance at a periodic-stable change point, in units of the marginal
/// outcome variance.
pub const CHANGE_POINT_JUMP_FACTOR: f64 = 1e3;

pub(crate) fn random_walk_param(coef: &str) -> String {
    format!("rw:{coef}")
}

pub(crate) fn ar_param(coef: &str) -> String {
    format!("ar:{coef}")
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    offset: usize,
    /// 1 for scalar coefficients; `1 + p'` for AR (level plus companion state).
    size: usize,
    dynamics: Dynamics,
}

/// Mapping between regression coefficients and state vector slots.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    names: Vec<String>,
    blocks: Vec<Block>,
    dim: usize,
}

impl StateLayout {
    pub fn new(spec: &ModelSpec, names: &[String]) -> Self {
        let mut offset = 0;
        let blocks = names
            .iter()
            .map(|name| {
                let dynamics = spec.dynamics_of(name).clone();
                let size = match &dynamics {
                    Dynamics::Ar { phi, .. } => 1 + phi.len(),
                    _ => 1,
                };
                let block = Block { offset, size, dynamics };
                offset += size;
                block
            })
            .collect();
        Self { names: names.to_vec(), blocks, dim: offset }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Vector `l` with `coefficient_i = lᵀθ`.
    pub fn loading(&self, i: usize) -> DVector<f64> {
        let mut l = DVector::zeros(self.dim);
        let b = &self.blocks[i];
        l[b.offset] = 1.0;
        if matches!(b.dynamics, Dynamics::Ar { .. }) {
            l[b.offset + 1] = 1.0;
        }
        l
    }

    pub fn loadings(&self) -> Vec<DVector<f64>> {
        (0..self.names.len()).map(|i| self.loading(i)).collect()
    }

    /// State-space observation row for a regressor row.
    pub fn observation_row(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut f = DVector::zeros(self.dim);
        for (b, xi) in self.blocks.iter().zip(x.iter()) {
            f[b.offset] = *xi;
            if matches!(b.dynamics, Dynamics::Ar { .. }) {
                f[b.offset + 1] = *xi;
            }
        }
        f
    }

    /// Free structural parameters with starting values scaled to the data.
    pub fn structural_template(&self, spec: &ModelSpec, dm: &DesignMatrix) -> StructuralParams {
        let scale = dm.outcome_scale();
        let mut names = Vec::new();
        let mut values = Vec::new();
        if spec.obs_variance.is_none() {
            names.push(OBS_VARIANCE_PARAM.to_string());
            values.push(0.5 * scale);
        }
        for (name, b) in self.names.iter().zip(&self.blocks) {
            match &b.dynamics {
                Dynamics::RandomWalk { variance: None } => {
                    names.push(random_walk_param(name));
                    values.push(0.1 * scale);
                }
                Dynamics::Ar { variance: None, .. } => {
                    names.push(ar_param(name));
                    values.push(0.1 * scale);
                }
                _ => {}
            }
        }
        StructuralParams::new(names, &values).expect("positive starting values")
    }
}

/// Build `(G, W, F, V, m0, C0)` from a resolved declaration, a complete design
/// and structural parameters.
///
/// Invariant coefficients get `G = 1, W = 0`; random walks `G = 1, W = σ²`;
/// AR coefficients a level state plus a companion block driven by `σ²`;
/// periodic-stable coefficients `G = 1` with `W = 0` except a jump variance
/// `κ` at the first time of each new period.
pub fn realize_state_space(spec: &ModelSpec, dm: &DesignMatrix, sp: &StructuralParams) -> Result<StateSpace> {
    let layout = StateLayout::new(spec, dm.names());
    realize_with_layout(spec, &layout, dm, sp)
}

pub(crate) fn realize_with_layout(
    spec: &ModelSpec,
    layout: &StateLayout,
    dm: &DesignMatrix,
    sp: &StructuralParams,
) -> Result<StateSpace> {
    if !spec.is_resolved() {
        return Err(Error::Contract("dynamics must be resolved before realization".into()));
    }
    if layout.names() != dm.names() {
        return Err(Error::Contract("state layout does not match design columns".into()));
    }
    let d = layout.dim();
    let n = dm.len();
    let free = |name: String| -> Result<f64> {
        sp.get(&name).ok_or_else(|| Error::Contract(format!("structural parameter {name} not supplied")))
    };

    let mut g = DMatrix::<f64>::identity(d, d);
    let mut w = DMatrix::<f64>::zeros(d, d);
    let mut jumps: Vec<(usize, usize)> = Vec::new();
    for (name, b) in layout.names.iter().zip(&layout.blocks) {
        match &b.dynamics {
            Dynamics::Invariant => {}
            Dynamics::RandomWalk { variance } => {
                w[(b.offset, b.offset)] = match variance {
                    Some(v) => *v,
                    None => free(random_walk_param(name))?,
                };
            }
            Dynamics::Ar { phi, variance } => {
                let dev = b.offset + 1;
                let p = phi.len();
                for i in 0..p {
                    for j in 0..p {
                        g[(dev + i, dev + j)] = 0.0;
                    }
                }
                for (j, v) in phi.iter().enumerate() {
                    g[(dev, dev + j)] = *v;
                }
                for i in 1..p {
                    g[(dev + i, dev + i - 1)] = 1.0;
                }
                w[(dev, dev)] = match variance {
                    Some(v) => *v,
                    None => free(ar_param(name))?,
                };
            }
            Dynamics::PeriodicStable { change_points: Some(cps) } => {
                for &cp in cps {
                    if cp == 0 || cp >= n {
                        return Err(Error::Contract(format!("change point {cp} for {name} outside (1, {n})")));
                    }
                    // Last time of the old period is cp (1-based), so the jump
                    // enters at 1-based cp + 1, i.e. 0-based index cp.
                    jumps.push((cp, b.offset));
                }
            }
            Dynamics::PeriodicStable { change_points: None } | Dynamics::Learn => unreachable!("checked above"),
        }
    }

    let kappa = CHANGE_POINT_JUMP_FACTOR * dm.outcome_variance();
    let mut w_schedule = Schedule::constant(w.clone());
    jumps.sort_unstable();
    for (t, slot) in jumps {
        let mut wt = w_schedule.at(t).clone();
        wt[(slot, slot)] += kappa;
        w_schedule.set(t, wt);
    }

    let mut rows = Vec::with_capacity(n);
    for (t, x) in dm.rows().iter().enumerate() {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "design row at t={} references a missing lagged outcome; impute or splice first",
                t + 1
            )));
        }
        rows.push(layout.observation_row(x));
    }

    let v = match spec.obs_variance {
        Some(v) => v,
        None => free(OBS_VARIANCE_PARAM.to_string())?,
    };
    let prior = spec.prior_variance.unwrap_or(DEFAULT_PRIOR_VARIANCE);
    StateSpace::new(
        Schedule::constant(g),
        w_schedule,
        rows,
        Schedule::constant(v),
        DVector::zeros(d),
        DMatrix::identity(d, d) * prior,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_design, NamedSeries, TimeSeriesDataset};

    fn dataset(n: usize) -> TimeSeriesDataset {
        TimeSeriesDataset::new(
            (0..n).map(|t| Some((t as f64 * 0.37).sin())).collect(),
            vec![NamedSeries::new("a", (0..n).map(|t| (t as f64 * 0.11).cos()).collect())],
            vec![NamedSeries::new("c", (0..n).map(|t| t as f64 / n as f64).collect())],
        )
        .unwrap()
    }

    fn params(spec: &ModelSpec, dm: &DesignMatrix) -> StructuralParams {
        StateLayout::new(spec, dm.names()).structural_template(spec, dm)
    }

    #[test]
    fn all_invariant_is_identity_and_zero_noise() {
        let ds = dataset(20);
        let spec = ModelSpec::new(1, 1, 0);
        let dm = build_design(&ds, &spec, None).unwrap();
        let ss = realize_state_space(&spec, &dm, &params(&spec, &dm)).unwrap();
        assert_eq!(ss.dim(), 5);
        assert_eq!(ss.g().base(), &DMatrix::identity(5, 5));
        assert!(ss.g().overrides().is_empty());
        assert_eq!(ss.w().base(), &DMatrix::zeros(5, 5));
        assert!(ss.w().overrides().is_empty());
    }

    #[test]
    fn random_walk_intercept_noise_cell() {
        let ds = dataset(20);
        let spec = ModelSpec::new(1, 1, 0).with_dynamics("intercept", Dynamics::RandomWalk { variance: Some(1.0) });
        let dm = build_design(&ds, &spec, None).unwrap();
        let ss = realize_state_space(&spec, &dm, &params(&spec, &dm)).unwrap();
        let w = ss.w().base();
        assert_eq!(w[(0, 0)], 1.0);
        assert_eq!(w.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn periodic_jumps_at_period_starts() {
        let ds = dataset(1000);
        let spec = ModelSpec::new(1, 1, 0)
            .with_dynamics("a", Dynamics::PeriodicStable { change_points: Some(vec![400, 700]) });
        let dm = build_design(&ds, &spec, None).unwrap();
        let ss = realize_state_space(&spec, &dm, &params(&spec, &dm)).unwrap();
        let slot = 2;
        // 0-based 400 and 700 are 1-based t = 401 and 701.
        let jump_times: Vec<usize> = ss.w().overrides().iter().map(|(t, _)| t + 1).collect();
        assert_eq!(jump_times, vec![401, 701]);
        for t in [399, 400, 401, 699, 700, 701] {
            let expected = if t == 400 || t == 700 { CHANGE_POINT_JUMP_FACTOR * dm.outcome_variance() } else { 0.0 };
            assert_eq!(ss.w().at(t)[(slot, slot)], expected, "0-based t={t}");
        }
    }

    #[test]
    fn ar_block_is_companion_form() {
        let ds = dataset(30);
        let spec = ModelSpec::new(1, 0, 0).with_dynamics("a", Dynamics::Ar { phi: vec![0.5, 0.2], variance: Some(0.3) });
        let dm = build_design(&ds, &spec, None).unwrap();
        let ss = realize_state_space(&spec, &dm, &params(&spec, &dm)).unwrap();
        // intercept, y_lag1, a(level), a(dev1), a(dev2), c
        assert_eq!(ss.dim(), 6);
        let g = ss.g().base();
        assert_eq!(g[(3, 3)], 0.5);
        assert_eq!(g[(3, 4)], 0.2);
        assert_eq!(g[(4, 3)], 1.0);
        assert_eq!(g[(4, 4)], 0.0);
        assert_eq!(g[(2, 2)], 1.0);
        assert_eq!(ss.w().base()[(3, 3)], 0.3);
        let f = &ss.f()[5];
        assert_eq!(f[2], dm.rows()[5][2]);
        assert_eq!(f[3], dm.rows()[5][2]);
        assert_eq!(f[4], 0.0);
    }

    #[test]
    fn unresolved_dynamics_are_rejected() {
        let ds = dataset(30);
        let spec = ModelSpec::new(1, 0, 0).with_dynamics("a", Dynamics::Learn);
        let dm = build_design(&ds, &spec, None).unwrap();
        let sp = params(&spec.exploratory(), &dm);
        assert!(matches!(realize_state_space(&spec, &dm, &sp), Err(Error::Contract(_))));
    }

    #[test]
    fn incomplete_rows_are_rejected() {
        let mut y: Vec<Option<f64>> = (0..20).map(|t| Some(t as f64)).collect();
        y[5] = None;
        let ds = dataset(20).with_outcome(y).unwrap();
        let spec = ModelSpec::new(1, 0, 0);
        let dm = build_design(&ds, &spec, None).unwrap();
        assert!(realize_state_space(&spec, &dm, &params(&spec, &dm)).is_err());
    }
}
