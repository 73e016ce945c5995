use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::pool::CoefficientPaths;
use crate::design::{realize_with_layout, DesignMatrix, Dynamics, ModelSpec, StateLayout};
use crate::dlm::{
    fit_structural_params, kalman_filter, kalman_smoother, log_likelihood, BeliefPath, FitOptions, MleFit, StateSpace,
    StructuralParams,
};
use crate::error::Result;
use crate::structure::{classify_dynamics, detect_change_points, DynamicsClassification, StructureOptions};

fn default_restarts() -> usize {
    3
}
fn default_warm_restarts() -> usize {
    1
}
fn default_localization_rounds() -> usize {
    3
}

/// Optimizer and structure-learning settings shared by every fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSettings {
    /// Simplex restarts for a cold start.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Simplex restarts when every parameter has a warm start.
    #[serde(default = "default_warm_restarts")]
    pub warm_restarts: usize,
    #[serde(default)]
    pub structure: StructureOptions,
    /// Rounds of likelihood localization of learned change points, each
    /// followed by a parameter refit.
    #[serde(default = "default_localization_rounds")]
    pub localization_rounds: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            restarts: default_restarts(),
            warm_restarts: default_warm_restarts(),
            structure: StructureOptions::default(),
            localization_rounds: default_localization_rounds(),
        }
    }
}

/// A maximum-likelihood fit of a resolved declaration with smoothed states.
#[derive(Debug, Clone)]
pub struct ModelFit {
    /// Declaration with every dynamics tag resolved.
    pub spec: ModelSpec,
    pub layout: StateLayout,
    pub params: StructuralParams,
    /// Parameters of the random-walk exploration used for structure learning.
    pub exploratory_params: Option<StructuralParams>,
    pub loglik: f64,
    pub converged: bool,
    pub state_space: StateSpace,
    pub filtered: BeliefPath,
    pub smoothed: BeliefPath,
    pub classifications: BTreeMap<String, DynamicsClassification>,
}

impl ModelFit {
    pub fn paths(&self) -> CoefficientPaths {
        CoefficientPaths::from_beliefs(&self.layout, &self.smoothed)
    }

    /// Change points of every periodic-stable coefficient.
    pub fn change_points(&self) -> BTreeMap<String, Vec<usize>> {
        self.spec
            .dynamics
            .iter()
            .filter_map(|(name, d)| match d {
                Dynamics::PeriodicStable { change_points: Some(cps) } => Some((name.clone(), cps.clone())),
                _ => None,
            })
            .collect()
    }

    /// Parameter sets usable as warm starts for a later fit.
    pub fn warm_start(&self) -> Vec<StructuralParams> {
        let mut out = vec![self.params.clone()];
        out.extend(self.exploratory_params.clone());
        out
    }

    /// Filter and smooth another design under the same structure and parameters.
    pub fn refit(&self, dm: &DesignMatrix) -> Result<BeliefPath> {
        let ss = realize_with_layout(&self.spec, &self.layout, dm, &self.params)?;
        kalman_smoother(&ss, &kalman_filter(&ss, dm.response())?)
    }
}

fn merge(template: &StructuralParams, sources: &[StructuralParams]) -> (StructuralParams, bool) {
    let mut all_found = !sources.is_empty();
    let logs = template
        .names()
        .iter()
        .zip(template.log_values())
        .map(|(name, lv)| match sources.iter().find_map(|s| s.get(name)) {
            Some(v) => v.ln(),
            None => {
                all_found = false;
                *lv
            }
        })
        .collect();
    (StructuralParams::from_log(template.names().to_vec(), logs).expect("finite log-values"), all_found)
}

fn mle(spec: &ModelSpec, layout: &StateLayout, dm: &DesignMatrix, warm: &[StructuralParams], settings: &FitSettings) -> Result<MleFit> {
    let (init, warm_complete) = merge(&layout.structural_template(spec, dm), warm);
    let opts = FitOptions {
        restarts: if warm_complete { settings.warm_restarts } else { settings.restarts },
        ..FitOptions::default()
    };
    fit_structural_params(|sp| realize_with_layout(spec, layout, dm, sp), &init, dm.response(), &opts)
}

/// Move each learned change point, one at a time, to the position within
/// half a flanking window that maximizes the likelihood under fixed
/// structural parameters. Returns whether any point moved.
fn localize_change_points(
    spec: &mut ModelSpec,
    dm: &DesignMatrix,
    params: &StructuralParams,
    names: &[String],
    opts: &StructureOptions,
) -> Result<bool> {
    let n = dm.len();
    let m = opts.min_seg.max(1);
    let radius = (opts.window / 2).max(1);
    let mut moved = false;
    for name in names {
        let Dynamics::PeriodicStable { change_points: Some(mut cps) } = spec.dynamics_of(name).clone() else {
            continue;
        };
        for i in 0..cps.len() {
            let lo = if i == 0 { dm.burn_in() + m } else { cps[i - 1] + m };
            let hi = if i + 1 == cps.len() { n.saturating_sub(m) } else { cps[i + 1].saturating_sub(m) };
            let (lo, hi) = (lo.max(cps[i].saturating_sub(radius)), hi.min(cps[i] + radius));
            let mut best = (cps[i], f64::NEG_INFINITY);
            for c in lo..=hi {
                let mut trial = cps.clone();
                trial[i] = c;
                let candidate = spec.clone().with_dynamics(name.clone(), Dynamics::PeriodicStable { change_points: Some(trial) });
                let trial_layout = StateLayout::new(&candidate, dm.names());
                let ll = log_likelihood(&realize_with_layout(&candidate, &trial_layout, dm, params)?, dm.response())?;
                // Ties keep the earliest position.
                if ll > best.1 + 1e-9 {
                    best = (c, ll);
                }
            }
            if best.0 != cps[i] {
                cps[i] = best.0;
                moved = true;
            }
        }
        spec.dynamics.insert(name.clone(), Dynamics::PeriodicStable { change_points: Some(cps) });
    }
    Ok(moved)
}

/// Fit a declaration to a complete design. Unresolved dynamics are learned
/// first from a random-walk exploration; learned change points are then
/// localized by likelihood.
pub fn fit_model(spec: &ModelSpec, dm: &DesignMatrix, warm: &[StructuralParams], settings: &FitSettings) -> Result<ModelFit> {
    let mut resolved = spec.clone();
    let mut classifications = BTreeMap::new();
    let mut exploratory_params = None;
    let mut warm: Vec<StructuralParams> = warm.to_vec();

    if !spec.is_resolved() {
        let ex_spec = spec.exploratory();
        let ex_layout = StateLayout::new(&ex_spec, dm.names());
        let ex = mle(&ex_spec, &ex_layout, dm, &warm, settings)?;
        let ss = realize_with_layout(&ex_spec, &ex_layout, dm, &ex.params)?;
        let smoothed = kalman_smoother(&ss, &kalman_filter(&ss, dm.response())?)?;
        let paths = CoefficientPaths::from_beliefs(&ex_layout, &smoothed);
        let b = dm.burn_in();
        let opts = &settings.structure;
        for (name, dynamics) in spec.dynamics.iter().filter(|(_, d)| !d.is_resolved()) {
            let i = ex_layout.index_of(name).expect("validated coefficient name");
            let means = &paths.means[i][b..];
            let sds: Vec<f64> = paths.vars[i][b..].iter().map(|v| v.sqrt()).collect();
            let shift = |cps: &[usize]| cps.iter().map(|c| c + b).collect::<Vec<_>>();
            let verdict = match dynamics {
                Dynamics::Learn => {
                    let mut c = classify_dynamics(means, &sds, opts);
                    c.change_points = shift(&c.change_points);
                    if let Dynamics::PeriodicStable { change_points: Some(cps) } = &mut c.dynamics {
                        *cps = shift(cps);
                    }
                    let d = c.dynamics.clone();
                    classifications.insert(name.clone(), c);
                    d
                }
                _ => Dynamics::PeriodicStable { change_points: Some(shift(&detect_change_points(means, &sds, opts))) },
            };
            resolved.dynamics.insert(name.clone(), verdict);
        }
        warm.push(ex.params.clone());
        exploratory_params = Some(ex.params);
    }

    let mut layout = StateLayout::new(&resolved, dm.names());
    let mut fit = mle(&resolved, &layout, dm, &warm, settings)?;
    let learned: Vec<String> = spec
        .dynamics
        .iter()
        .filter(|(_, d)| !d.is_resolved())
        .filter(|(name, _)| matches!(resolved.dynamics_of(name), Dynamics::PeriodicStable { .. }))
        .map(|(name, _)| name.clone())
        .collect();
    for _ in 0..settings.localization_rounds {
        if learned.is_empty() || !localize_change_points(&mut resolved, dm, &fit.params, &learned, &settings.structure)? {
            break;
        }
        layout = StateLayout::new(&resolved, dm.names());
        let w = [vec![fit.params.clone()], warm.clone()].concat();
        fit = mle(&resolved, &layout, dm, &w, settings)?;
    }
    let state_space = realize_with_layout(&resolved, &layout, dm, &fit.params)?;
    let filtered = kalman_filter(&state_space, dm.response())?;
    let smoothed = kalman_smoother(&state_space, &filtered)?;
    Ok(ModelFit {
        spec: resolved,
        layout,
        params: fit.params,
        exploratory_params,
        loglik: filtered.loglik,
        converged: fit.converged,
        state_space,
        filtered,
        smoothed,
        classifications,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::build_design;
    use crate::simulation::{generate_scenario, ScenarioKind, ScenarioSpec};

    #[test]
    fn displaced_change_points_move_back_to_the_truth() {
        let sc = ScenarioSpec::new(ScenarioKind::Nonstationary, 500, 11);
        let (ds, _) = generate_scenario(&sc).unwrap();
        let periodic = |cps: Vec<usize>| sc.model_spec().with_dynamics("a", Dynamics::PeriodicStable { change_points: Some(cps) });
        let truth = periodic(vec![200, 350]);
        let dm = build_design(&ds, &truth, None).unwrap();
        let layout = StateLayout::new(&truth, dm.names());
        let params = mle(&truth, &layout, &dm, &[], &FitSettings::default()).unwrap().params;

        let mut spec = periodic(vec![188, 361]);
        let moved = localize_change_points(&mut spec, &dm, &params, &["a".to_string()], &StructureOptions::default()).unwrap();
        assert!(moved);
        let Dynamics::PeriodicStable { change_points: Some(cps) } = spec.dynamics_of("a") else { panic!() };
        assert!(cps[0].abs_diff(200) <= 2 && cps[1].abs_diff(350) <= 2, "{cps:?}");
    }

    #[test]
    fn learned_change_points_are_localized() {
        let sc = ScenarioSpec::new(ScenarioKind::Nonstationary, 500, 12);
        let (ds, _) = generate_scenario(&sc).unwrap();
        let spec = sc.model_spec();
        let dm = build_design(&ds, &spec, None).unwrap();
        let fit = fit_model(&spec, &dm, &[], &FitSettings::default()).unwrap();
        let cps = &fit.change_points()["a"];
        assert_eq!(cps.len(), 2);
        assert!(cps[0].abs_diff(200) <= 2 && cps[1].abs_diff(350) <= 2, "{cps:?}");
    }
}
