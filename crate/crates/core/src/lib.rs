//! State-space multiple imputation for N-of-1 multivariate time series.
//!
//! The crate is organised bottom-up:
//!
//! - [`dlm`]: linear Gaussian state space models, Kalman filtering and
//!   smoothing with missing-outcome skipping, likelihood and MLE of the
//!   structural variances, posterior state draws.
//! - [`design`]: datasets, model declarations and their translation into a
//!   realized [`dlm::StateSpace`].
//! - [`missingness`]: MCAR / MAR / MNAR mask generation and reporting.
//! - [`imputers`]: SSMmp, SSMimpute, Rubin pooling, complete-case analysis
//!   and the baseline imputation strategies.
//! - [`structure`]: change-point detection, dynamics classification and
//!   one-step-prediction scoring.
//! - [`simulation`]: benchmark data generators and the Monte Carlo grid.

pub mod design;
pub mod dlm;
pub mod error;
pub mod imputers;
pub mod io;
pub mod linalg;
pub mod missingness;
pub mod optim;
pub mod rng;
pub mod simulation;
pub mod structure;

pub use error::{Error, Result};
