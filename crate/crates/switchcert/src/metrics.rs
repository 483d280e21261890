//! Closed-loop comparison metrics between a full-order and a reduced MPC run.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mpc::MpcResult;
use crate::ocp::{self, CostConfig};
use crate::ops::SwitchedOperatorSet;
use crate::sparse;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub e_u: f64,
    pub e_theta: f64,
    pub e_y: f64,
    pub e_j: f64,
}

/// `Σ_{k≥1} τ ‖x_k‖²` with the Euclidean norm.
fn l2_sq(x: &DMatrix<f64>, tau: f64) -> f64 {
    (1..x.ncols()).map(|k| tau * x.column(k).norm_squared()).sum()
}

/// `Σ_{k≥1} τ ‖θ_k‖²_V`.
fn v_sq(ops: &SwitchedOperatorSet, x: &DMatrix<f64>, tau: f64) -> f64 {
    (1..x.ncols()).map(|k| tau * sparse::quad_form(ops.v_inner(), &x.column(k).into_owned())).sum()
}

fn relative(num_sq: f64, den_sq: f64, what: &str) -> Result<f64> {
    if !(den_sq > 0.0) {
        return Err(Error::Invalid(format!("reference {what} has zero norm")));
    }
    Ok((num_sq.max(0.0) / den_sq).sqrt())
}

/// Relative errors of `red` against the reference `fom`. `cost` is the global
/// cost data; it is restricted to the simulated nodes.
pub fn compute_metrics(ops: &SwitchedOperatorSet, cost: &CostConfig, tau: f64, fom: &MpcResult, red: &MpcResult) -> Result<Metrics> {
    let nodes = fom.controls.ncols();
    if red.controls.shape() != fom.controls.shape()
        || red.states.shape() != fom.states.shape()
        || red.outputs.shape() != fom.outputs.shape()
    {
        return Err(Error::Dimension("closed-loop runs live on different grids".into()));
    }
    compute_metrics_raw(
        ops,
        &cost.window(0, nodes)?,
        tau,
        (&fom.controls, &fom.states, &fom.outputs),
        (&red.controls, &red.states, &red.outputs),
    )
}

type Triple<'a> = (&'a DMatrix<f64>, &'a DMatrix<f64>, &'a DMatrix<f64>);

/// Same as [`compute_metrics`] on bare `(u, θ, y)` trajectories over the
/// grid of `cost`.
pub fn compute_metrics_raw(ops: &SwitchedOperatorSet, cost: &CostConfig, tau: f64, fom: Triple, red: Triple) -> Result<Metrics> {
    let e_theta = relative(v_sq(ops, &(fom.1 - red.1), tau), v_sq(ops, fom.1, tau), "state")?;
    let m = output_control_metrics(cost, tau, (fom.0, fom.2), (red.0, red.2))?;
    Ok(Metrics { e_u: m.e_u, e_theta, e_y: m.e_y, e_j: m.e_j })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputMetrics {
    pub e_u: f64,
    pub e_y: f64,
    pub e_j: f64,
}

/// `e_u`, `e_y`, `e_J` from `(u, y)` pairs; needs no state or operators.
pub fn output_control_metrics(
    cost: &CostConfig,
    tau: f64,
    fom: (&DMatrix<f64>, &DMatrix<f64>),
    red: (&DMatrix<f64>, &DMatrix<f64>),
) -> Result<OutputMetrics> {
    let mut cost = cost.clone();
    cost.terminal_target = cost.output_target.column(cost.n_nodes() - 1).into_owned();
    let e_u = relative(l2_sq(&(fom.0 - red.0), tau), l2_sq(fom.0, tau), "control")?;
    let e_y = relative(l2_sq(&(fom.1 - red.1), tau), l2_sq(fom.1, tau), "output")?;
    let j_fom = ocp::evaluate_cost(&cost, fom.1, fom.0, tau)?;
    let j_red = ocp::evaluate_cost(&cost, red.1, red.0, tau)?;
    if !(j_fom > 0.0) || !j_fom.is_finite() {
        return Err(Error::Invalid(format!("reference cost {j_fom} cannot normalize")));
    }
    Ok(OutputMetrics { e_u, e_y, e_j: (j_fom - j_red).abs() / j_fom })
}
