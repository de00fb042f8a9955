//! Volatility modeling: classical GARCH(1,1), EGARCH(1,1,1) and diagonal
//! BEKK(1,1) estimators, plus recurrent time-varying-coefficient variants
//! trained by stochastic gradient variational inference.

pub mod autodiff;
pub mod classic_bekk;
pub mod classic_garch;
pub mod error;
pub mod evaluation;
pub mod likelihood;
pub mod linalg;
pub mod neural_core;
pub mod neural_garch;
pub mod optim;
pub mod simulate;
pub mod timeseries;

pub use error::{Error, Result};
