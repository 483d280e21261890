//! Certified model predictive control for linear switched parabolic systems.
//!
//! The crate covers the full pipeline: switched operator sets and switching
//! signals, implicit-Euler forward and adjoint solvers, a proximal-gradient
//! optimal control solver, POD reduced-order models, a-posteriori error
//! estimators and three receding-horizon drivers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod band;
pub mod certify;
pub mod config;
pub mod eig;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod forward;
pub mod metrics;
pub mod model;
pub mod mpc;
pub mod norms;
pub mod ocp;
pub mod ops;
pub mod pod;
pub mod signal;
pub mod sparse;
pub mod trajectory;

pub use error::{Error, Result};
pub use model::{Dynamics, FullModel, ReducedModel};
pub use ops::{ModeOperators, SwitchedOperatorSet};
pub use signal::{Horizon, Side, SwitchingSignal, TimeGrid};
pub use trajectory::{Kind, Trajectory};
