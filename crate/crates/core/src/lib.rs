//! Estimation of the point where a monotone regression function crosses a
//! target level, using isotonic regression and two-stage hybrid designs.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod harness;
pub mod isotonic;
pub mod limitdist;
pub mod nuisance;
pub mod oracles;
pub mod procedures;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use exec::Execution;
pub use isotonic::{fit_isotonic, DataSet, StepFunction};
pub use oracles::{analytic_oracle, queue_oracle, replay_oracle, NoiseModel, ResponseFn, ResponseOracle};
pub use procedures::{DesignConfig, EstimateReport, Procedure, TrueNuisance, Tuning};
