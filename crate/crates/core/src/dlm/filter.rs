use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{BeliefPath, GaussianBelief, Prediction, StateSpace};
use crate::error::{Error, Result};
use crate::linalg::symmetrize_in_place;

/// Forward Kalman recursion. Missing outcomes contribute a pure prediction
/// step: zero gain, `(m_t, C_t) = (a_t, R_t)`, and no likelihood term.
pub fn kalman_filter(ss: &StateSpace, y: &[Option<f64>]) -> Result<BeliefPath> {
    let mut beliefs = Vec::with_capacity(y.len());
    let mut predicted = Vec::with_capacity(y.len());
    let loglik = run(ss, y, |pred, belief| {
        predicted.push(pred);
        beliefs.push(belief);
    })?;
    Ok(BeliefPath { beliefs, predicted, loglik })
}

/// Innovation log-likelihood `Σ_obs -½[log(2πQ_t) + e_t²/Q_t]`.
pub fn log_likelihood(ss: &StateSpace, y: &[Option<f64>]) -> Result<f64> {
    run_loglik_only(ss, y)
}

struct Transitions {
    mats: Vec<DMatrix<f64>>,
    transposed: Vec<DMatrix<f64>>,
    identity: Vec<bool>,
}

impl Transitions {
    fn new(ss: &StateSpace) -> Self {
        let d = ss.dim();
        let eye = DMatrix::<f64>::identity(d, d);
        let mats: Vec<DMatrix<f64>> = ss.g().values().cloned().collect();
        let transposed = mats.iter().map(|g| g.transpose()).collect();
        let identity = mats.iter().map(|g| *g == eye).collect();
        Self { mats, transposed, identity }
    }
}

struct Workspace {
    m: DVector<f64>,
    c: DMatrix<f64>,
    a: DVector<f64>,
    r: DMatrix<f64>,
    tmp: DMatrix<f64>,
    rf: DVector<f64>,
}

fn check_length(ss: &StateSpace, y: &[Option<f64>]) -> Result<()> {
    if ss.len() != y.len() {
        return Err(Error::Contract(format!(
            "outcome length {} does not match system length {}",
            y.len(),
            ss.len()
        )));
    }
    Ok(())
}

/// One predict/update step; returns the likelihood contribution and the innovation.
fn step(
    ss: &StateSpace,
    trans: &Transitions,
    ws: &mut Workspace,
    t: usize,
    y: Option<f64>,
) -> Result<(f64, Option<f64>, f64)> {
    let slot = ss.g().slot(t);
    if trans.identity[slot] {
        ws.a.copy_from(&ws.m);
        ws.r.copy_from(&ws.c);
    } else {
        let g = &trans.mats[slot];
        ws.a.gemv(1.0, g, &ws.m, 0.0);
        ws.tmp.gemm(1.0, g, &ws.c, 0.0);
        ws.r.gemm(1.0, &ws.tmp, &trans.transposed[slot], 0.0);
    }
    ws.r += ss.w().at(t);
    symmetrize_in_place(&mut ws.r);

    let f = &ss.f()[t];
    ws.rf.gemv(1.0, &ws.r, f, 0.0);
    let q = f.dot(&ws.rf) + *ss.v().at(t);
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::Degenerate { t: t + 1, q });
    }

    let mut ll = 0.0;
    let mut innovation = None;
    match y {
        Some(yt) => {
            let e = yt - f.dot(&ws.a);
            ws.m.copy_from(&ws.a);
            ws.m.axpy(e / q, &ws.rf, 1.0);
            ws.c.copy_from(&ws.r);
            ws.c.ger(-1.0 / q, &ws.rf, &ws.rf, 1.0);
            symmetrize_in_place(&mut ws.c);
            ll = -0.5 * ((2.0 * PI * q).ln() + e * e / q);
            innovation = Some(e);
        }
        None => {
            ws.m.copy_from(&ws.a);
            ws.c.copy_from(&ws.r);
        }
    }

    let d = ws.c.nrows();
    for i in 0..d {
        let cii = ws.c[(i, i)];
        if !cii.is_finite() || cii < -1e-8 * (1.0 + ws.r[(i, i)].abs()) {
            return Err(Error::Numerical {
                t: t + 1,
                msg: format!("posterior covariance lost positive semi-definiteness (C[{i},{i}]={cii})"),
            });
        }
    }
    if !ws.m.iter().all(|x| x.is_finite()) {
        return Err(Error::Numerical { t: t + 1, msg: "non-finite posterior mean".into() });
    }
    Ok((ll, innovation, q))
}

fn workspace(ss: &StateSpace) -> Workspace {
    let d = ss.dim();
    Workspace {
        m: ss.m0().clone(),
        c: ss.c0().clone(),
        a: DVector::zeros(d),
        r: DMatrix::zeros(d, d),
        tmp: DMatrix::zeros(d, d),
        rf: DVector::zeros(d),
    }
}

fn run(
    ss: &StateSpace,
    y: &[Option<f64>],
    mut sink: impl FnMut(Prediction, GaussianBelief),
) -> Result<f64> {
    check_length(ss, y)?;
    let trans = Transitions::new(ss);
    let mut ws = workspace(ss);
    let mut loglik = 0.0;
    for (t, yt) in y.iter().enumerate() {
        let (ll, innovation, q) = step(ss, &trans, &mut ws, t, *yt)?;
        loglik += ll;
        sink(
            Prediction { mean: ws.a.clone(), cov: ws.r.clone(), q, innovation },
            GaussianBelief { mean: ws.m.clone(), cov: ws.c.clone() },
        );
    }
    Ok(loglik)
}

fn run_loglik_only(ss: &StateSpace, y: &[Option<f64>]) -> Result<f64> {
    check_length(ss, y)?;
    let trans = Transitions::new(ss);
    let mut ws = workspace(ss);
    let mut loglik = 0.0;
    for (t, yt) in y.iter().enumerate() {
        loglik += step(ss, &trans, &mut ws, t, *yt)?.0;
    }
    Ok(loglik)
}
