//! Backward implicit-Euler adjoint, the exact transpose of the forward scheme.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::Dynamics;
use crate::signal::Horizon;
use crate::trajectory::{Kind, Trajectory};

/// Data driving the adjoint: outputs, tracking target, terminal target and weight.
#[derive(Debug, Clone, Copy)]
pub struct AdjointData<'a> {
    pub outputs: &'a DMatrix<f64>,
    pub target: &'a DMatrix<f64>,
    pub terminal_target: &'a DVector<f64>,
    pub terminal_weight: f64,
}

/// Solve the discrete adjoint.
///
/// Column `k < K-1` is the multiplier of step `k` (the right limit `p(t_k⁺)`),
/// column `K-1` the terminal value `M⁻¹ μ Cᵀ(y_T − y_T^d)`. For step `k` with
/// mode `i`:
///
/// `(M_i + τA_iᵀ) p_k = M_{i'} p_{k+1} + τ C_iᵀ (y_{k+1} − y^d_{k+1})`
///
/// where `i'` is the mode of step `k+1` (the terminal mode for the last step).
/// Left limits `p(t_s⁻) = M_{σ(t_s⁻)}⁻¹ M_{σ(t_s⁺)} p(t_s⁺)` are stored at
/// switching nodes.
pub fn solve_adjoint<D: Dynamics + ?Sized>(model: &D, horizon: &Horizon, data: AdjointData<'_>) -> Result<Trajectory> {
    let k_nodes = horizon.n_nodes();
    let p_out = model.n_outputs();
    for (m, name) in [(data.outputs, "outputs"), (data.target, "target")] {
        if m.nrows() != p_out || m.ncols() != k_nodes {
            return Err(Error::Dimension(format!("{name} are {}x{}, expected {p_out}x{k_nodes}", m.nrows(), m.ncols())));
        }
    }
    if data.terminal_target.len() != p_out {
        return Err(Error::Dimension("terminal target length".into()));
    }
    if !(data.terminal_weight >= 0.0) {
        return Err(Error::Invalid(format!("terminal weight {}", data.terminal_weight)));
    }
    let tau = model.tau();
    let last = k_nodes - 1;
    let last_mode = horizon.step_mode(last - 1);
    let mut values = DMatrix::zeros(model.dim(), k_nodes);

    // `carry` holds M_{i_{k+1}} p_{k+1}, i.e. M_{i_k} p(t_{k+1}⁻).
    let y_last = data.outputs.column(last) - data.terminal_target;
    let mut carry = model.output_tr_mul(last_mode, &(y_last * data.terminal_weight));
    values.set_column(last, &model.mass_solve(last_mode, carry.clone()));

    let mut left_limits = Vec::new();
    for k in (0..last).rev() {
        let mode = horizon.step_mode(k);
        let miss = data.outputs.column(k + 1) - data.target.column(k + 1);
        let mut rhs = carry;
        rhs.axpy(tau, &model.output_tr_mul(mode, &miss.into_owned()), 1.0);
        let p = model.step_solve_tr(mode, rhs);
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular(format!("non-finite adjoint at step {k}")));
        }
        carry = model.mass_mul(mode, &p);
        if horizon.is_switch(k) {
            let before = horizon.step_mode(k - 1);
            left_limits.push((k, model.mass_solve(before, carry.clone())));
        }
        values.set_column(k, &p);
    }
    left_limits.reverse();
    let mut traj = Trajectory::new(*horizon.grid(), Kind::Adjoint, values)?;
    traj.left_limits = left_limits;
    Ok(traj)
}

/// Gradient of the smooth cost in the `U` inner product:
/// `λ(u_k − u^d_k) + B_{i_{k-1}}ᵀ p_{k-1}` at node `k ≥ 1`, zero at node 0.
pub fn gradient<D: Dynamics + ?Sized>(
    model: &D,
    horizon: &Horizon,
    adjoint: &Trajectory,
    controls: &DMatrix<f64>,
    control_target: &DMatrix<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    if controls.shape() != control_target.shape() || controls.ncols() != adjoint.len() {
        return Err(Error::Dimension("control, target and adjoint lengths differ".into()));
    }
    let mut g = (controls - control_target) * lambda;
    g.set_column(0, &DVector::zeros(controls.nrows()));
    for k in 1..controls.ncols() {
        let p = adjoint.values.column(k - 1).into_owned();
        let bp = model.input_tr_mul(horizon.step_mode(k - 1), &p);
        let mut col = g.column_mut(k);
        col += bp;
    }
    Ok(g)
}

/// Defect of the discrete integration-by-parts identity
///
/// `Σ_k (θ_{k+1} − θ_k)ᵀ M_{i_k} p(t_{k+1}⁻)`
/// `= θ_Tᵀ M p_T − θ_0ᵀ M p_0 + Σ_s (θ_sᵀ M_{σ⁻} p(t_s⁻) − θ_sᵀ M_{σ⁺} p(t_s⁺))`
/// `  − Σ_k θ_kᵀ M_{i_k} (p(t_{k+1}⁻) − p_k)`.
///
/// With `include_jumps = false` the switching-node sum is dropped.
pub fn integration_by_parts_defect<D: Dynamics + ?Sized>(
    model: &D,
    horizon: &Horizon,
    state: &Trajectory,
    adjoint: &Trajectory,
    include_jumps: bool,
) -> Result<f64> {
    let k_nodes = horizon.n_nodes();
    if state.len() != k_nodes || adjoint.len() != k_nodes || state.dim() != adjoint.dim() || state.dim() != model.dim() {
        return Err(Error::Dimension("state, adjoint and horizon disagree".into()));
    }
    let last = k_nodes - 1;
    let pairing = |x: &DVector<f64>, mode: usize, p: &DVector<f64>| x.dot(&model.mass_mul(mode, p));

    let mut lhs = 0.0;
    let mut rest = 0.0;
    for k in 0..last {
        let mode = horizon.step_mode(k);
        let p_next = adjoint.left_at(k + 1);
        let th = state.at(k);
        lhs += pairing(&(state.at(k + 1) - &th), mode, &p_next);
        rest += pairing(&th, mode, &(p_next - adjoint.at(k)));
    }
    let mut rhs = pairing(&state.at(last), horizon.step_mode(last - 1), &adjoint.at(last))
        - pairing(&state.at(0), horizon.step_mode(0), &adjoint.at(0))
        - rest;
    if include_jumps {
        for s in horizon.switch_nodes() {
            let th = state.at(s);
            rhs += pairing(&th, horizon.step_mode(s - 1), &adjoint.left_at(s))
                - pairing(&th, horizon.step_mode(s), &adjoint.at(s));
        }
    }
    Ok((lhs - rhs).abs())
}
