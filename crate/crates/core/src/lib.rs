//! Learning-based model predictive control for a platoon of automated
//! vehicles followed by one human-driven vehicle (HV).
//!
//! The HV is modeled by a fourth-order ARX recursion plus a Gaussian-process
//! correction. The controller propagates the HV position mean and variance
//! over the horizon and tightens the rear safety gap by the predicted
//! standard deviation.

pub mod chance;
pub mod data;
pub mod error;
pub mod gp;
pub mod hv;
pub mod io;
pub mod mpc;
pub mod platoon;
pub mod plot;
pub mod qp;
pub mod sim;

pub use error::{Error, Result};
