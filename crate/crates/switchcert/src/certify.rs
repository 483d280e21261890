//! Constants and a-posteriori error estimators for reduced optimal control.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::band::BandLu;
use crate::eig;
use crate::error::{Error, Result};
use crate::forward;
use crate::model::{Dynamics, FullModel};
use crate::ocp::{self, CostConfig};
use crate::ops::SwitchedOperatorSet;
use crate::pod::ReducedSystem;
use crate::signal::Horizon;
use crate::sparse;
use crate::trajectory::Trajectory;

/// Per-mode constants that do not depend on the horizon.
#[derive(Debug, Clone)]
pub struct ConstantsBundle {
    /// `c[(i, j)] = sup ‖v‖²_{M_i} / ‖v‖²_{M_j}`
    pub equivalence: DMatrix<f64>,
    /// `λmax(Bᵀ S⁻¹ B)` per mode, `S = sym(A)`.
    pub input_a: Vec<f64>,
    /// `λmax(C M⁻¹ Cᵀ)` per mode.
    pub output_m: Vec<f64>,
    /// `λmax(C S⁻¹ Cᵀ)` per mode.
    pub output_a: Vec<f64>,
    pub lambda: f64,
    pub terminal_weight: f64,
}

fn congruence_max(lu: &BandLu, cols: &DMatrix<f64>) -> Result<f64> {
    let z = lu.solve_matrix(cols);
    eig::max_sym_eig(&cols.tr_mul(&z))
}

impl ConstantsBundle {
    pub fn compute(ops: &SwitchedOperatorSet, lambda: f64, terminal_weight: f64) -> Result<Self> {
        if !(lambda > 0.0) || !(terminal_weight >= 0.0) {
            return Err(Error::Invalid("need lambda > 0 and terminal weight >= 0".into()));
        }
        let l = ops.n_modes();
        let mut equivalence = DMatrix::from_element(l, l, 1.0);
        for i in 0..l {
            for j in 0..l {
                if i != j {
                    let c = eig::pencil_max_eig(&ops.mode(i).mass, &ops.mode(j).mass, ops.mass_lu(j))?;
                    // Ritz values approach the top eigenvalue from below.
                    equivalence[(i, j)] = c * (1.0 + 1e-12);
                }
            }
        }
        let mut input_a = Vec::new();
        let mut output_m = Vec::new();
        let mut output_a = Vec::new();
        for i in 0..l {
            let m = ops.mode(i);
            let b = sparse::to_dense(&m.input);
            let ct = m.output.transpose();
            input_a.push(congruence_max(ops.riesz_lu(i), &b)?);
            output_m.push(congruence_max(ops.mass_lu(i), &ct)?);
            output_a.push(congruence_max(ops.riesz_lu(i), &ct)?);
        }
        Ok(Self { equivalence, input_a, output_m, output_a, lambda, terminal_weight })
    }

    pub fn c(&self, i: usize, j: usize) -> f64 {
        self.equivalence[(i, j)]
    }

    pub fn for_horizon(&self, horizon: &Horizon) -> HorizonConstants {
        HorizonConstants::new(self, horizon)
    }
}

/// Switching weights and assembled constants for one horizon.
#[derive(Debug, Clone)]
pub struct HorizonConstants {
    /// `c_{σ(t_l⁺), σ(t_l⁻)}` for the switches `l = 1..N-1`.
    pub switch_factors: Vec<f64>,
    /// State weights `ω_{N,i}`.
    pub omega: Vec<f64>,
    /// Adjoint weights `ω̃_{0,i}`.
    pub omega_tilde: Vec<f64>,
    pub input_a: f64,
    pub output_m: f64,
    pub output_a: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub lambda: f64,
    pub terminal_weight: f64,
    /// Tracks the `η_H = 0` convention; always zero.
    pub eta_h: f64,
}

impl HorizonConstants {
    pub fn new(bundle: &ConstantsBundle, horizon: &Horizon) -> Self {
        let switch_factors: Vec<f64> = horizon
            .switch_nodes()
            .iter()
            .map(|&s| bundle.c(horizon.step_mode(s), horizon.step_mode(s - 1)))
            .collect();
        let n = switch_factors.len() + 1;
        let omega = omega_weights(&switch_factors, n);
        let mut omega_tilde = vec![1.0; n];
        for i in 1..n {
            omega_tilde[i] = omega_tilde[i - 1] * 2.0 * switch_factors[i - 1];
        }
        let mut active: Vec<usize> = horizon.modes().to_vec();
        active.sort_unstable();
        active.dedup();
        let pick = |v: &[f64]| active.iter().map(|&i| v[i]).fold(0.0, f64::max);
        let input_a = pick(&bundle.input_a);
        let output_m = pick(&bundle.output_m);
        let output_a = pick(&bundle.output_a);
        let (lambda, mu) = (bundle.lambda, bundle.terminal_weight);
        let terminal_m = bundle.output_m[horizon.step_mode(horizon.n_steps() - 1)];
        let c1 = (output_a / 2.0).max(mu * terminal_m);
        let c2 = omega_tilde.iter().map(|w| input_a / (w * lambda * lambda)).fold(0.0, f64::max);
        let c3 = omega.iter().map(|w| output_a / (w * lambda)).fold(mu * terminal_m / lambda, f64::max);
        Self {
            switch_factors,
            omega,
            omega_tilde,
            input_a,
            output_m,
            output_a,
            c1,
            c2,
            c3,
            lambda,
            terminal_weight: mu,
            eta_h: 0.0,
        }
    }

    pub fn n_intervals(&self) -> usize {
        self.omega.len()
    }

    /// `ω_{n_t, i}`, `i = 0..n_t`.
    pub fn omega_upto(&self, n_t: usize) -> Vec<f64> {
        omega_weights(&self.switch_factors, n_t)
    }

    /// Number of switching intervals touched by `(t_0, t_k]`; at least one.
    pub fn intervals_to_node(horizon: &Horizon, k: usize) -> usize {
        if k == 0 {
            1
        } else {
            horizon.interval_of_step(k - 1) + 1
        }
    }

    /// `C_4` for the first `n_t` intervals.
    pub fn c4(&self, n_t: usize) -> f64 {
        self.omega_upto(n_t).iter().map(|w| w * self.input_a).fold(0.0, f64::max)
    }
}

fn omega_weights(factors: &[f64], n: usize) -> Vec<f64> {
    let mut w = vec![1.0; n.max(1)];
    for i in (0..n.saturating_sub(1)).rev() {
        w[i] = w[i + 1] * factors[i];
    }
    w
}

/// Upper-trapezoidal factor `F` with `‖W x‖_{S⁻¹} = |F x|`.
///
/// `F` is the triangular factor of a Householder QR of `D^{-1/2} L⁻¹ W`,
/// `S = L D Lᵀ`, which keeps the cancellation in the residual vector rather
/// than in a squared quadratic form.
#[derive(Debug, Clone)]
pub struct DualNormFactor {
    factor: DMatrix<f64>,
}

impl DualNormFactor {
    /// `form_lu` must factor a symmetric positive definite matrix.
    pub fn new(w: &DMatrix<f64>, form_lu: &BandLu) -> Self {
        let x = form_lu.whiten_matrix(w);
        let factor = if x.nrows() >= x.ncols() { x.qr().r() } else { x };
        Self { factor }
    }

    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        (&self.factor * x).norm()
    }
}

/// Riesz factors for every affine residual family of a reduced system.
#[derive(Debug, Clone)]
pub struct OfflineResidualData {
    /// `[B_i, −M_iV, −A_iV]` acting on `[u_{k+1}; (θ̂_{k+1} − θ̂_k)/τ; θ̂_{k+1}]`.
    pub state: Vec<DualNormFactor>,
    /// `[C_iᵀ, M_iV, −A_iᵀV]` acting on `[ŷ_{k+1} − y^d_{k+1}; (p̂(t_{k+1}⁻) − p̂_k)/τ; p̂_k]`.
    pub adjoint: Vec<DualNormFactor>,
    /// `[−M_iV, C_iᵀ]` acting on `[p̂_T; μ(ŷ_T − y_T^d)]`, mass dual norm.
    pub terminal: Vec<DualNormFactor>,
    /// `(before, after) ↦ [−M_bV, M_aV]` acting on `[p̂(t⁻); p̂(t⁺)]`, mass dual norm of `before`.
    pub jumps: BTreeMap<(usize, usize), DualNormFactor>,
}

impl OfflineResidualData {
    pub fn assemble(ops: &SwitchedOperatorSet, basis: &DMatrix<f64>) -> Result<Self> {
        let l = ops.n_modes();
        let mut state = Vec::new();
        let mut adjoint = Vec::new();
        let mut terminal = Vec::new();
        let mut mv = Vec::new();
        for i in 0..l {
            let m = ops.mode(i);
            let b = sparse::to_dense(&m.input);
            let ct = m.output.transpose();
            let m_v = sparse::mul_dense(&m.mass, basis);
            let a_v = sparse::mul_dense(&m.stiffness, basis);
            let at_v = sparse::mul_dense(&m.stiffness.transpose(), basis);
            let w = concat(&[&b, &(-&m_v), &(-&a_v)]);
            state.push(DualNormFactor::new(&w, ops.riesz_lu(i)));
            let w = concat(&[&ct, &m_v, &(-&at_v)]);
            adjoint.push(DualNormFactor::new(&w, ops.riesz_lu(i)));
            let w = concat(&[&(-&m_v), &ct]);
            terminal.push(DualNormFactor::new(&w, ops.mass_lu(i)));
            mv.push(m_v);
        }
        let mut jumps = BTreeMap::new();
        for before in 0..l {
            for after in 0..l {
                if before != after {
                    let w = concat(&[&(-&mv[before]), &mv[after]]);
                    jumps.insert((before, after), DualNormFactor::new(&w, ops.mass_lu(before)));
                }
            }
        }
        Ok(Self { state, adjoint, terminal, jumps })
    }
}

fn concat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks[0].nrows();
    let m: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, m);
    let mut c = 0;
    for b in blocks {
        out.columns_mut(c, b.ncols()).copy_from(*b);
        c += b.ncols();
    }
    out
}

fn stack(parts: &[DVector<f64>]) -> DVector<f64> {
    let n: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(n);
    let mut c = 0;
    for p in parts {
        out.rows_mut(c, p.len()).copy_from(p);
        c += p.len();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualPath {
    /// One sparse Riesz solve per residual.
    Direct,
    /// Precomputed Riesz factors only.
    OfflineOnline,
}

/// `‖R_{k+1}‖_{a'}` for each step `k` of the lifted reduced state.
pub fn state_residuals(
    rom: &ReducedSystem,
    horizon: &Horizon,
    controls: &DMatrix<f64>,
    reduced_states: &DMatrix<f64>,
    path: ResidualPath,
) -> Result<Vec<f64>> {
    let k_nodes = horizon.n_nodes();
    if reduced_states.ncols() != k_nodes || controls.ncols() != k_nodes || reduced_states.nrows() != rom.dim() {
        return Err(Error::Dimension("reduced trajectory does not match the horizon".into()));
    }
    let tau = horizon.tau();
    let ops = rom.full();
    let v = rom.basis();
    let mut out = Vec::with_capacity(horizon.n_steps());
    for k in 0..horizon.n_steps() {
        let i = horizon.step_mode(k);
        let u = controls.column(k + 1).into_owned();
        let next = reduced_states.column(k + 1).into_owned();
        let diff = (&next - reduced_states.column(k)) / tau;
        let norm = match path {
            ResidualPath::OfflineOnline => rom.offline().state[i].norm(&stack(&[u, diff, next])),
            ResidualPath::Direct => {
                let m = ops.mode(i);
                let r = sparse::matvec(&m.input, &u) - sparse::matvec(&m.mass, &(v * diff)) - sparse::matvec(&m.stiffness, &(v * next));
                crate::norms::dual_norm_a(&r, i, ops)?
            }
        };
        out.push(norm);
    }
    Ok(out)
}

/// Residual norms of the lifted reduced adjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointResiduals {
    /// `‖Q_k‖_{a'}` per step `k`.
    pub steps: Vec<f64>,
    /// `‖Q_T‖` in the dual mass norm of the terminal mode.
    pub terminal: f64,
    /// `(s, ‖Q_s‖)` at switching nodes, dual mass norm of `σ(t_s⁻)`.
    pub jumps: Vec<(usize, f64)>,
}

pub fn adjoint_residuals(
    rom: &ReducedSystem,
    horizon: &Horizon,
    cfg: &CostConfig,
    reduced_outputs: &DMatrix<f64>,
    reduced_adjoint: &Trajectory,
    path: ResidualPath,
) -> Result<AdjointResiduals> {
    let k_nodes = horizon.n_nodes();
    if reduced_adjoint.len() != k_nodes || reduced_adjoint.dim() != rom.dim() || reduced_outputs.ncols() != k_nodes {
        return Err(Error::Dimension("reduced adjoint does not match the horizon".into()));
    }
    let switches = horizon.switch_nodes();
    for s in &switches {
        if !reduced_adjoint.left_limits.iter().any(|(k, _)| k == s) {
            return Err(Error::Invalid(format!("missing one-sided adjoint value at node {s}")));
        }
    }
    let tau = horizon.tau();
    let ops = rom.full();
    let v = rom.basis();
    let last = k_nodes - 1;
    let off = rom.offline();

    let mut steps = Vec::with_capacity(horizon.n_steps());
    for k in 0..horizon.n_steps() {
        let i = horizon.step_mode(k);
        let miss = (reduced_outputs.column(k + 1) - cfg.output_target.column(k + 1)).into_owned();
        let p = reduced_adjoint.at(k);
        let diff = (reduced_adjoint.left_at(k + 1) - &p) / tau;
        let norm = match path {
            ResidualPath::OfflineOnline => off.adjoint[i].norm(&stack(&[miss, diff, p])),
            ResidualPath::Direct => {
                let m = ops.mode(i);
                let q = m.output.tr_mul(&miss) + sparse::matvec(&m.mass, &(v * diff)) - sparse::matvec_tr(&m.stiffness, &(v * p));
                crate::norms::dual_norm_a(&q, i, ops)?
            }
        };
        steps.push(norm);
    }

    let tm = horizon.step_mode(last - 1);
    let p_t = reduced_adjoint.at(last);
    let term_miss = (reduced_outputs.column(last) - &cfg.terminal_target) * cfg.terminal_weight;
    let terminal = match path {
        ResidualPath::OfflineOnline => off.terminal[tm].norm(&stack(&[p_t, term_miss])),
        ResidualPath::Direct => {
            let m = ops.mode(tm);
            let q = m.output.tr_mul(&term_miss) - sparse::matvec(&m.mass, &(v * p_t));
            crate::norms::dual_norm_m(&q, tm, ops)?
        }
    };

    let mut jumps = Vec::with_capacity(switches.len());
    for s in switches {
        let (before, after) = (horizon.step_mode(s - 1), horizon.step_mode(s));
        let minus = reduced_adjoint.left_at(s);
        let plus = reduced_adjoint.at(s);
        let norm = match path {
            ResidualPath::OfflineOnline => off.jumps[&(before, after)].norm(&stack(&[minus, plus])),
            ResidualPath::Direct => {
                let q = sparse::matvec(&ops.mode(after).mass, &(v * plus)) - sparse::matvec(&ops.mode(before).mass, &(v * minus));
                crate::norms::dual_norm_m(&q, before, ops)?
            }
        };
        jumps.push((s, norm));
    }
    Ok(AdjointResiduals { steps, terminal, jumps })
}

/// `Σ_{k < upto} ω_{j(k)} τ ‖R_{k+1}‖²` with interval weights `omega`.
pub fn weighted_residual_sum(norms: &[f64], horizon: &Horizon, omega: &[f64], upto: usize) -> f64 {
    let tau = horizon.tau();
    let mut interval = 0;
    let mut s = 0.0;
    for (k, r) in norms.iter().enumerate().take(upto) {
        if horizon.is_switch(k) {
            interval += 1;
        }
        s += omega[interval] * tau * r * r;
    }
    s
}

/// `Δ_θ` up to step `upto`: `sqrt(ω_0 e_0² + Σ ω τ ‖R‖²)` with the full-horizon weights.
pub fn delta_theta(norms: &[f64], init_error: f64, hc: &HorizonConstants, horizon: &Horizon, upto: usize) -> f64 {
    let s = hc.omega[0] * init_error * init_error + weighted_residual_sum(norms, horizon, &hc.omega, upto);
    s.max(0.0).sqrt()
}

/// `Δ_p = sqrt(2 Σ_i ω̃_i ‖Q_{t_{i+1}}‖² + Σ ω̃ τ ‖Q‖²)`, the last jump being `Q_T`.
pub fn delta_p(res: &AdjointResiduals, hc: &HorizonConstants, horizon: &Horizon) -> f64 {
    let n = hc.n_intervals();
    let mut jump_sum = 0.0;
    for i in 0..n {
        let q = if i + 1 < n { res.jumps[i].1 } else { res.terminal };
        jump_sum += hc.omega_tilde[i] * q * q;
    }
    let steps = weighted_residual_sum(&res.steps, horizon, &hc.omega_tilde, horizon.n_steps());
    (2.0 * jump_sum + steps).max(0.0).sqrt()
}

/// A control bound `sqrt(base + coeff · Δ²)` as a function of the initial bound `Δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlBound {
    pub base: f64,
    pub coeff: f64,
}

impl ControlBound {
    pub fn at(&self, init_bound: f64) -> f64 {
        (self.base + self.coeff * init_bound * init_bound).max(0.0).sqrt()
    }
}

/// `Δ̃_B² = C_1 Δ² + C_2 Δ_p² + C_3 Δ_θ²`
pub fn tilde_delta_b(delta_theta: f64, delta_p: f64, hc: &HorizonConstants) -> ControlBound {
    ControlBound { base: hc.c2 * delta_p * delta_p + hc.c3 * delta_theta * delta_theta, coeff: hc.c1 }
}

/// Reduced optimal bundle from a ROM subproblem, in reduced coordinates.
#[derive(Debug, Clone)]
pub struct ReducedSolution<'a> {
    pub control: &'a DMatrix<f64>,
    pub state: &'a DMatrix<f64>,
    pub output: &'a DMatrix<f64>,
    pub adjoint: &'a Trajectory,
}

/// Intermediate full-order quantities shared by `Δ_A` and `Δ_B`.
#[derive(Debug, Clone)]
pub struct Intermediate {
    /// `θ̌ = S(θ̌_n, û)`
    pub state: DMatrix<f64>,
    /// `y̌ = C θ̌`
    pub output: DMatrix<f64>,
}

pub fn intermediate<D: Dynamics + ?Sized>(
    full: &D,
    horizon: &Horizon,
    initial: &DVector<f64>,
    control: &DMatrix<f64>,
) -> Result<Intermediate> {
    let state = forward::solve_state_values(full, horizon, initial, control)?;
    let output = forward::apply_output(full, horizon, &state)?;
    Ok(Intermediate { state, output })
}

/// `‖Bᵀ(V p̂_r − p)‖_U` with the left-node adjoint alignment of the gradient.
fn input_adjoint_gap(full: &FullModel, rom: &ReducedSystem, horizon: &Horizon, reduced: &Trajectory, p: &Trajectory) -> f64 {
    let tau = horizon.tau();
    let mut s = 0.0;
    for k in 1..horizon.n_nodes() {
        let diff = rom.lift(&reduced.at(k - 1)) - p.at(k - 1);
        s += tau * full.input_tr_mul(horizon.step_mode(k - 1), &diff).norm_squared();
    }
    s.sqrt()
}

/// `Δ_A² = ‖Bᵀ(V p̂_r − p̂)‖²_U / λ² + C_1 Δ² / (2λ)` with `p̂ = 𝒜(y̌)`.
pub fn delta_a(
    full: &FullModel,
    rom: &ReducedSystem,
    horizon: &Horizon,
    cfg: &CostConfig,
    reduced: &ReducedSolution<'_>,
    check: &Intermediate,
    hc: &HorizonConstants,
) -> Result<ControlBound> {
    let p_hat = ocp::adjoint_of(full, horizon, cfg, &check.output)?;
    let gap = input_adjoint_gap(full, rom, horizon, reduced.adjoint, &p_hat);
    let l = cfg.lambda;
    Ok(ControlBound { base: gap * gap / (l * l), coeff: hc.c1 / (2.0 * l) })
}

/// `Δ_B² = ‖Bᵀ(V p̂_r − p̌)‖²_U/λ² + ‖ŷ_r − y̌‖²/λ + μ|ŷ_r(T) − y̌(T)|²/λ + C_1Δ²/λ` with `p̌ = 𝒜(ŷ_r)`.
pub fn delta_b(
    full: &FullModel,
    rom: &ReducedSystem,
    horizon: &Horizon,
    cfg: &CostConfig,
    reduced: &ReducedSolution<'_>,
    check: &Intermediate,
    hc: &HorizonConstants,
) -> Result<ControlBound> {
    let p_check = ocp::adjoint_of(full, horizon, cfg, reduced.output)?;
    let gap = input_adjoint_gap(full, rom, horizon, reduced.adjoint, &p_check);
    let tau = horizon.tau();
    let last = horizon.n_nodes() - 1;
    let mut out_gap = 0.0;
    for k in 1..=last {
        out_gap += tau * (reduced.output.column(k) - check.output.column(k)).norm_squared();
    }
    let term = (reduced.output.column(last) - check.output.column(last)).norm_squared();
    let l = cfg.lambda;
    let base = gap * gap / (l * l) + out_gap / l + cfg.terminal_weight * term / l;
    Ok(ControlBound { base, coeff: hc.c1 / l })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateBoundKind {
    /// Error of the intermediate full state driven by the reduced control.
    FomRom,
    /// Error of the lifted reduced state.
    RomRom,
}

/// Optimal-state bound at node `k`, measured in the mass norm of `σ(t_k⁻)`.
///
/// `residual_norms` and `projection_defect` are only used for [`StateBoundKind::RomRom`].
#[allow(clippy::too_many_arguments)]
pub fn optimal_state_bound(
    kind: StateBoundKind,
    delta_u: f64,
    init_bound: f64,
    residual_norms: &[f64],
    projection_defect: f64,
    hc: &HorizonConstants,
    horizon: &Horizon,
    k: usize,
) -> f64 {
    let n_t = HorizonConstants::intervals_to_node(horizon, k);
    let omega = hc.omega_upto(n_t);
    let c4 = if k == 0 { 0.0 } else { hc.c4(n_t) };
    let s = match kind {
        StateBoundKind::FomRom => omega[0] * init_bound * init_bound + c4 / 2.0 * delta_u * delta_u,
        StateBoundKind::RomRom => {
            let d = init_bound + projection_defect;
            omega[0] * d * d + c4 * delta_u * delta_u + weighted_residual_sum(residual_norms, horizon, &omega, k)
        }
    };
    s.max(0.0).sqrt()
}

/// Closed-loop recursion over the first sampling interval `(t_0, t_d]` of
/// `horizon`: the optimal-state bound evaluated at node `sampling_nodes`.
/// `residual_norms` and `projection_defect` only enter for ROM-ROM.
#[allow(clippy::too_many_arguments)]
pub fn mpc_init_bound(
    kind: StateBoundKind,
    delta_u: f64,
    previous: f64,
    residual_norms: &[f64],
    projection_defect: f64,
    hc: &HorizonConstants,
    horizon: &Horizon,
    sampling_nodes: usize,
) -> f64 {
    optimal_state_bound(kind, delta_u, previous, residual_norms, projection_defect, hc, horizon, sampling_nodes)
}
