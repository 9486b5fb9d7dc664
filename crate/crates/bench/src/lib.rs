//! Scenario registry, runner and acceptance checks for the Hessian fitters.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curve;
pub mod error;
pub mod hessians;
pub mod method;
pub mod pool;
pub mod scenario;
pub mod verify;

pub use error::{BenchError, BenchResult};
pub use scenario::{registry, run_scenario, Run, Scenario, ScenarioConfig};
