//! Linear Gaussian state space models with a scalar observation.
//!
//! State equation `θ_t = G_t θ_{t-1} + w_t`, `w_t ~ N(0, W_t)`; observation
//! `y_t = F_t θ_t + v_t`, `v_t ~ N(0, V_t)`; prior `θ_0 ~ N(m0, C0)`.
//! Missing outcomes are passed as `None` and skipped by the filter.

mod draws;
mod filter;
mod mle;
mod smoother;

pub use draws::{draw_states, sample_gaussian, GaussianSampler, PathSampler};
pub use filter::{kalman_filter, log_likelihood};
pub use mle::{fit_structural_params, FitOptions, MleFit, StructuralParams};
pub use smoother::kalman_smoother;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::min_eigenvalue;

/// Diffuse prior variance used when the caller does not supply one.
pub const DEFAULT_PRIOR_VARIANCE: f64 = 1e4;

/// A per-time quantity that is constant except at a sparse set of times.
///
/// Indices are 0-based positions in the series.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule<T> {
    base: T,
    overrides: Vec<(usize, T)>,
}

impl<T> Schedule<T> {
    pub fn constant(base: T) -> Self {
        Self { base, overrides: Vec::new() }
    }

    /// Set the value at index `t`, replacing any existing override there.
    pub fn set(&mut self, t: usize, value: T) {
        match self.overrides.binary_search_by_key(&t, |(i, _)| *i) {
            Ok(pos) => self.overrides[pos].1 = value,
            Err(pos) => self.overrides.insert(pos, (t, value)),
        }
    }

    pub fn at(&self, t: usize) -> &T {
        match self.overrides.binary_search_by_key(&t, |(i, _)| *i) {
            Ok(pos) => &self.overrides[pos].1,
            Err(_) => &self.base,
        }
    }

    pub fn base(&self) -> &T {
        &self.base
    }

    pub fn overrides(&self) -> &[(usize, T)] {
        &self.overrides
    }

    /// Base value followed by every override value.
    pub fn values(&self) -> impl Iterator<Item = &T> {
        std::iter::once(&self.base).chain(self.overrides.iter().map(|(_, v)| v))
    }

    /// Position of the value used at `t` in [`Schedule::values`] order.
    pub(crate) fn slot(&self, t: usize) -> usize {
        match self.overrides.binary_search_by_key(&t, |(i, _)| *i) {
            Ok(pos) => pos + 1,
            Err(_) => 0,
        }
    }
}

/// A realized state space system ready for filtering.
#[derive(Debug, Clone)]
pub struct StateSpace {
    g: Schedule<DMatrix<f64>>,
    w: Schedule<DMatrix<f64>>,
    f: Vec<DVector<f64>>,
    v: Schedule<f64>,
    m0: DVector<f64>,
    c0: DMatrix<f64>,
}

impl StateSpace {
    /// Build and validate a system. `f` holds one observation row per time.
    pub fn new(
        g: Schedule<DMatrix<f64>>,
        w: Schedule<DMatrix<f64>>,
        f: Vec<DVector<f64>>,
        v: Schedule<f64>,
        m0: DVector<f64>,
        c0: DMatrix<f64>,
    ) -> Result<Self> {
        let d = m0.len();
        if d == 0 {
            return Err(Error::Contract("state dimension must be positive".into()));
        }
        if c0.nrows() != d || c0.ncols() != d {
            return Err(Error::Contract(format!("C0 must be {d}x{d}")));
        }
        for gm in g.values() {
            if gm.nrows() != d || gm.ncols() != d {
                return Err(Error::Contract(format!("G must be {d}x{d}")));
            }
        }
        for wm in w.values() {
            if wm.nrows() != d || wm.ncols() != d {
                return Err(Error::Contract(format!("W must be {d}x{d}")));
            }
            check_psd(wm, "W")?;
        }
        check_psd(&c0, "C0")?;
        for (t, row) in f.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Contract(format!(
                    "F row at t={} has length {}, expected {d}",
                    t + 1,
                    row.len()
                )));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Contract(format!("F row at t={} has missing entries", t + 1)));
            }
        }
        for &vv in v.values() {
            if !(vv > 0.0 && vv.is_finite()) {
                return Err(Error::Contract(format!("V must be positive and finite, got {vv}")));
            }
        }
        Ok(Self { g, w, f, v, m0, c0 })
    }

    /// Time-invariant system with the same `G`, `W`, `V` at every step.
    pub fn time_invariant(
        g: DMatrix<f64>,
        w: DMatrix<f64>,
        f: Vec<DVector<f64>>,
        v: f64,
        m0: DVector<f64>,
        c0: DMatrix<f64>,
    ) -> Result<Self> {
        Self::new(Schedule::constant(g), Schedule::constant(w), f, Schedule::constant(v), m0, c0)
    }

    pub fn dim(&self) -> usize {
        self.m0.len()
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    pub fn g(&self) -> &Schedule<DMatrix<f64>> {
        &self.g
    }

    pub fn w(&self) -> &Schedule<DMatrix<f64>> {
        &self.w
    }

    pub fn f(&self) -> &[DVector<f64>] {
        &self.f
    }

    pub fn v(&self) -> &Schedule<f64> {
        &self.v
    }

    pub fn m0(&self) -> &DVector<f64> {
        &self.m0
    }

    pub fn c0(&self) -> &DMatrix<f64> {
        &self.c0
    }
}

fn check_psd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    let asym = (m - m.transpose()).abs().max();
    let scale = m.abs().max().max(1.0);
    if asym > 1e-10 * scale {
        return Err(Error::Contract(format!("{name} must be symmetric")));
    }
    if m.iter().all(|x| *x == 0.0) {
        return Ok(());
    }
    if min_eigenvalue(m) < -1e-10 * scale {
        return Err(Error::Contract(format!("{name} must be positive semi-definite")));
    }
    Ok(())
}

/// Posterior of the state at one time: filtered `(m_t, C_t)` or smoothed `(s_t, S_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// One-step prediction quantities at time t.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `a_t = G_t m_{t-1}`.
    pub mean: DVector<f64>,
    /// `R_t = G_t C_{t-1} G_tᵀ + W_t`.
    pub cov: DMatrix<f64>,
    /// `Q_t = F_t R_t F_tᵀ + V_t`.
    pub q: f64,
    /// `e_t = y_t - F_t a_t` when `y_t` is observed.
    pub innovation: Option<f64>,
}

/// Per-time beliefs for a whole series plus the filter's prediction terms.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefPath {
    pub beliefs: Vec<GaussianBelief>,
    pub predicted: Vec<Prediction>,
    /// Innovation log-likelihood over observed outcomes.
    pub loglik: f64,
}

impl BeliefPath {
    pub fn len(&self) -> usize {
        self.beliefs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beliefs.is_empty()
    }

    /// Mean and variance of the linear functional `lᵀθ_t` at every time.
    pub fn project(&self, loading: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        self.beliefs
            .iter()
            .map(|b| {
                let mean = loading.dot(&b.mean);
                let var = (loading.transpose() * &b.cov * loading)[(0, 0)].max(0.0);
                (mean, var)
            })
            .unzip()
    }
}
