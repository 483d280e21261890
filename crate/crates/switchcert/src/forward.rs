//! Implicit-Euler integration of the switched state equation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::Dynamics;
use crate::signal::Horizon;
use crate::trajectory::{Kind, Trajectory};

fn check_controls<D: Dynamics + ?Sized>(model: &D, horizon: &Horizon, controls: &DMatrix<f64>) -> Result<()> {
    if controls.nrows() != model.n_inputs() || controls.ncols() != horizon.n_nodes() {
        return Err(Error::Dimension(format!(
            "controls are {}x{}, expected {}x{}",
            controls.nrows(),
            controls.ncols(),
            model.n_inputs(),
            horizon.n_nodes()
        )));
    }
    Ok(())
}

/// State coefficients, one column per node.
///
/// Step `k` uses the mode active on `(t_k, t_{k+1}]` and the control column
/// `k + 1`. At a switching node the stored value is the left limit; the
/// transition map is applied on the fly before the next step.
pub fn solve_state_values<D: Dynamics + ?Sized>(
    model: &D,
    horizon: &Horizon,
    initial: &DVector<f64>,
    controls: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if initial.len() != model.dim() {
        return Err(Error::Dimension(format!("initial value of length {} for dimension {}", initial.len(), model.dim())));
    }
    check_controls(model, horizon, controls)?;
    let tau = model.tau();
    if (tau - horizon.tau()).abs() > 1e-12 * tau {
        return Err(Error::Invalid(format!("model step {tau} differs from grid step {}", horizon.tau())));
    }
    let k_nodes = horizon.n_nodes();
    let mut out = DMatrix::zeros(model.dim(), k_nodes);
    out.set_column(0, initial);
    let mut current = initial.clone();
    for k in 0..horizon.n_steps() {
        let mode = horizon.step_mode(k);
        if horizon.is_switch(k) {
            current = model.transition(horizon.step_mode(k - 1), mode, current);
        }
        let mut rhs = model.mass_mul(mode, &current);
        let u = controls.column(k + 1).into_owned();
        rhs.axpy(tau, &model.input_mul(mode, &u), 1.0);
        current = model.step_solve(mode, rhs);
        if current.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular(format!("non-finite state at step {k}")));
        }
        out.set_column(k + 1, &current);
    }
    Ok(out)
}

pub fn solve_state<D: Dynamics + ?Sized>(
    model: &D,
    horizon: &Horizon,
    initial: &DVector<f64>,
    controls: &DMatrix<f64>,
) -> Result<Trajectory> {
    let values = solve_state_values(model, horizon, initial, controls)?;
    Trajectory::new(*horizon.grid(), Kind::State, values)
}

/// `y_k = C_{σ(t_k⁻)} θ_k`, with `σ(t_0⁺)` at the first node.
pub fn apply_output<D: Dynamics + ?Sized>(model: &D, horizon: &Horizon, states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if states.nrows() != model.dim() || states.ncols() != horizon.n_nodes() {
        return Err(Error::Dimension(format!(
            "states are {}x{}, expected {}x{}",
            states.nrows(),
            states.ncols(),
            model.dim(),
            horizon.n_nodes()
        )));
    }
    let mut y = DMatrix::zeros(model.n_outputs(), states.ncols());
    for k in 0..states.ncols() {
        let col = states.column(k).into_owned();
        y.set_column(k, &model.output_mul(horizon.node_mode(k), &col));
    }
    Ok(y)
}
