//! Energy norms, dual norms and weighted space-time norms.

use nalgebra::DVector;
use nalgebra_sparse::CsrMatrix;

use crate::error::{Error, Result};
use crate::ops::SwitchedOperatorSet;
use crate::signal::Horizon;
use crate::sparse;
use crate::trajectory::{Kind, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Form {
    Mass,
    Stiffness,
}

/// `sqrt(vᵀ sym(A) v)`; the quadratic form only sees the symmetric part.
pub fn energy_norm(v: &DVector<f64>, form: &CsrMatrix<f64>) -> Result<f64> {
    if v.len() != form.nrows() {
        return Err(Error::Dimension(format!("vector of length {} against {}x{} form", v.len(), form.nrows(), form.ncols())));
    }
    Ok(sparse::quad_form(form, v).max(0.0).sqrt())
}

pub fn mode_norm(ops: &SwitchedOperatorSet, v: &DVector<f64>, form: Form, mode: usize) -> f64 {
    let m = ops.mode(mode);
    let q = match form {
        Form::Mass => sparse::quad_form(&m.mass, v),
        Form::Stiffness => sparse::quad_form(&m.stiffness, v),
    };
    q.max(0.0).sqrt()
}

/// `sqrt(rᵀ sym(A_mode)⁻¹ r)` via one solve with the symmetric part.
pub fn dual_norm_a(r: &DVector<f64>, mode: usize, ops: &SwitchedOperatorSet) -> Result<f64> {
    if r.len() != ops.dim() {
        return Err(Error::Dimension(format!("residual of length {} for N = {}", r.len(), ops.dim())));
    }
    let z = ops.riesz_lu(mode).solve(r);
    Ok(r.dot(&z).max(0.0).sqrt())
}

/// `sqrt(rᵀ M_mode⁻¹ r)`
pub fn dual_norm_m(r: &DVector<f64>, mode: usize, ops: &SwitchedOperatorSet) -> Result<f64> {
    if r.len() != ops.dim() {
        return Err(Error::Dimension(format!("residual of length {} for N = {}", r.len(), ops.dim())));
    }
    let z = ops.mass_lu(mode).solve(r);
    Ok(r.dot(&z).max(0.0).sqrt())
}

/// Discrete `‖v‖_{form,ω}` over the steps `0..stop_step`, rectangle rule.
///
/// Primal trajectories are sampled at the right node of each step, adjoint
/// trajectories at the left node, matching the implicit-Euler scheme and
/// its transpose. `weights[j]` multiplies the `j`-th switching interval.
pub fn weighted_spacetime_norm(
    ops: &SwitchedOperatorSet,
    traj: &Trajectory,
    horizon: &Horizon,
    form: Form,
    weights: &[f64],
    stop_step: usize,
) -> Result<f64> {
    if traj.len() != horizon.n_nodes() {
        return Err(Error::Dimension("trajectory and horizon disagree".into()));
    }
    if stop_step > horizon.n_steps() {
        return Err(Error::Domain(format!("stop step {stop_step} beyond {} steps", horizon.n_steps())));
    }
    let needed = if stop_step == 0 { 0 } else { horizon.interval_of_step(stop_step - 1) + 1 };
    if weights.len() < needed {
        return Err(Error::Invalid(format!("{} weights given, {} switching intervals used", weights.len(), needed)));
    }
    let tau = horizon.tau();
    let mut sum = 0.0;
    let mut interval = 0;
    for k in 0..stop_step {
        if horizon.is_switch(k) {
            interval += 1;
        }
        let node = if traj.kind == Kind::Adjoint { k } else { k + 1 };
        let v = traj.at(node);
        let n = mode_norm(ops, &v, form, horizon.step_mode(k));
        sum += weights[interval] * tau * n * n;
    }
    Ok(sum.sqrt())
}
