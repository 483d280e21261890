//! Finite-horizon optimal control: cost, proximal map and a proximal-gradient solver.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::adjoint::{self, AdjointData};
use crate::error::{Error, Result};
use crate::forward;
use crate::model::Dynamics;
use crate::signal::Horizon;
use crate::trajectory::Trajectory;

/// Tracking, Tikhonov, terminal, L1 and box data of the cost.
#[derive(Debug, Clone)]
pub struct CostConfig {
    /// `p × K`
    pub output_target: DMatrix<f64>,
    /// `ρ × K`
    pub control_target: DMatrix<f64>,
    pub terminal_target: DVector<f64>,
    pub lambda: f64,
    pub terminal_weight: f64,
    pub l1_weight: f64,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.terminal_weight >= 0.0) || !(self.l1_weight >= 0.0) {
            return Err(Error::Invalid("terminal and L1 weights must be nonnegative".into()));
        }
        let rho = self.control_target.nrows();
        if self.lower.len() != rho || self.upper.len() != rho {
            return Err(Error::Dimension("box bounds do not match the number of inputs".into()));
        }
        if self.lower.iter().zip(self.upper.iter()).any(|(a, b)| !(a <= b)) {
            return Err(Error::Invalid("box bounds need lower <= upper".into()));
        }
        if self.output_target.ncols() != self.control_target.ncols() {
            return Err(Error::Dimension("targets live on different grids".into()));
        }
        if self.terminal_target.len() != self.output_target.nrows() {
            return Err(Error::Dimension("terminal target length".into()));
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.control_target.ncols()
    }

    /// Restriction to the nodes `start..start + n_nodes`.
    pub fn window(&self, start: usize, n_nodes: usize) -> Result<Self> {
        if start + n_nodes > self.n_nodes() {
            return Err(Error::Domain(format!("window [{start}, {}) outside {} nodes", start + n_nodes, self.n_nodes())));
        }
        Ok(Self {
            output_target: self.output_target.columns(start, n_nodes).into_owned(),
            control_target: self.control_target.columns(start, n_nodes).into_owned(),
            ..self.clone()
        })
    }

    pub fn is_feasible(&self, u: &DMatrix<f64>) -> bool {
        (1..u.ncols()).all(|k| {
            (0..u.nrows()).all(|j| u[(j, k)] >= self.lower[j] && u[(j, k)] <= self.upper[j])
        })
    }
}

/// `Σ_{k≥1} τ ⟨a_k, b_k⟩`
pub fn control_inner(a: &DMatrix<f64>, b: &DMatrix<f64>, tau: f64) -> f64 {
    let mut s = 0.0;
    for k in 1..a.ncols() {
        s += a.column(k).dot(&b.column(k));
    }
    tau * s
}

pub fn control_norm(a: &DMatrix<f64>, tau: f64) -> f64 {
    control_inner(a, a, tau).max(0.0).sqrt()
}

/// Smooth part: rectangle-rule tracking and Tikhonov terms plus the terminal term.
pub fn smooth_cost(cfg: &CostConfig, y: &DMatrix<f64>, u: &DMatrix<f64>, tau: f64) -> Result<f64> {
    if y.shape() != cfg.output_target.shape() || u.shape() != cfg.control_target.shape() {
        return Err(Error::Dimension("trajectories do not match the cost grid".into()));
    }
    let k_nodes = y.ncols();
    let mut track = 0.0;
    let mut reg = 0.0;
    for k in 1..k_nodes {
        track += (y.column(k) - cfg.output_target.column(k)).norm_squared();
        reg += (u.column(k) - cfg.control_target.column(k)).norm_squared();
    }
    let term = (y.column(k_nodes - 1) - &cfg.terminal_target).norm_squared();
    Ok(0.5 * tau * track + 0.5 * cfg.lambda * tau * reg + 0.5 * cfg.terminal_weight * term)
}

/// Nonsmooth part `c_L1 ‖u‖_{L1} + 𝟙_box(u)`.
pub fn nonsmooth_cost(cfg: &CostConfig, u: &DMatrix<f64>, tau: f64) -> f64 {
    if !cfg.is_feasible(u) {
        return f64::INFINITY;
    }
    let l1: f64 = (1..u.ncols()).map(|k| u.column(k).iter().map(|v| v.abs()).sum::<f64>()).sum();
    cfg.l1_weight * tau * l1
}

/// Full cost; `+∞` outside the box.
pub fn evaluate_cost(cfg: &CostConfig, y: &DMatrix<f64>, u: &DMatrix<f64>, tau: f64) -> Result<f64> {
    let g = nonsmooth_cost(cfg, u, tau);
    if g.is_infinite() {
        return Ok(f64::INFINITY);
    }
    Ok(smooth_cost(cfg, y, u, tau)? + g)
}

pub fn soft_threshold(x: f64, s: f64) -> f64 {
    x.signum() * (x.abs() - s).max(0.0)
}

/// Proximal map of `α g`: per-entry soft threshold by `α c_L1` then clamp.
/// Column 0 carries no weight and is set to zero.
pub fn prox_g(v: &DMatrix<f64>, step: f64, cfg: &CostConfig) -> DMatrix<f64> {
    let s = step * cfg.l1_weight;
    let mut out = v.clone();
    for k in 0..out.ncols() {
        for j in 0..out.nrows() {
            out[(j, k)] = if k == 0 { 0.0 } else { soft_threshold(v[(j, k)], s).clamp(cfg.lower[j], cfg.upper[j]) };
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub window: usize,
    pub armijo: f64,
    pub min_step: f64,
    pub max_step: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self { abs_tol: 1e-11, rel_tol: 1e-11, max_iter: 20_000, window: 5, armijo: 1e-4, min_step: 1e-8, max_step: 1e8 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerResult {
    pub control: DMatrix<f64>,
    pub state: Trajectory,
    pub adjoint: Trajectory,
    pub output: DMatrix<f64>,
    pub cost: f64,
    pub stationarity: f64,
    pub iterations: usize,
    pub wall_time: Duration,
}

/// One forward/adjoint evaluation of the smooth part.
pub struct Evaluation {
    pub state: Trajectory,
    pub output: DMatrix<f64>,
    pub smooth: f64,
}

pub fn evaluate<D: Dynamics + ?Sized>(
    model: &D,
    horizon: &Horizon,
    cfg: &CostConfig,
    initial: &DVector<f64>,
    u: &DMatrix<f64>,
) -> Result<Evaluation> {
    let state = forward::solve_state(model, horizon, initial, u)?;
    let output = forward::apply_output(model, horizon, &state.values)?;
    let smooth = smooth_cost(cfg, &output, u, horizon.tau())?;
    if !smooth.is_finite() {
        return Err(Error::Invalid("non-finite cost".into()));
    }
    Ok(Evaluation { state, output, smooth })
}

pub fn adjoint_of<D: Dynamics + ?Sized>(model: &D, horizon: &Horizon, cfg: &CostConfig, output: &DMatrix<f64>) -> Result<Trajectory> {
    adjoint::solve_adjoint(
        model,
        horizon,
        AdjointData {
            outputs: output,
            target: &cfg.output_target,
            terminal_target: &cfg.terminal_target,
            terminal_weight: cfg.terminal_weight,
        },
    )
}

/// Smooth gradient at `u`, via one forward and one adjoint solve.
pub fn gradient_smooth<D: Dynamics + ?Sized>(
    model: &D,
    horizon: &Horizon,
    cfg: &CostConfig,
    initial: &DVector<f64>,
    u: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let ev = evaluate(model, horizon, cfg, initial, u)?;
    let p = adjoint_of(model, horizon, cfg, &ev.output)?;
    adjoint::gradient(model, horizon, &p, u, &cfg.control_target, cfg.lambda)
}

/// `‖u − prox_g(u − ∇F(u), 1)‖_U`
pub fn stationarity(u: &DMatrix<f64>, grad: &DMatrix<f64>, cfg: &CostConfig, tau: f64) -> f64 {
    let trial = prox_g(&(u - grad), 1.0, cfg);
    control_norm(&(u - trial), tau)
}

/// Proximal gradient with a safeguarded Barzilai–Borwein step and a
/// nonmonotone Armijo backtracking.
pub fn solve_ocp<D: Dynamics + ?Sized>(
    model: &D,
    horizon: &Horizon,
    cfg: &CostConfig,
    initial: &DVector<f64>,
    warm_start: &DMatrix<f64>,
    settings: &OptimizerSettings,
) -> Result<OptimizerResult> {
    cfg.validate()?;
    if cfg.n_nodes() != horizon.n_nodes() {
        return Err(Error::Dimension(format!("cost has {} nodes, horizon {}", cfg.n_nodes(), horizon.n_nodes())));
    }
    if warm_start.shape() != cfg.control_target.shape() {
        return Err(Error::Dimension("warm start shape".into()));
    }
    let start = Instant::now();
    let tau = horizon.tau();
    let step_limits = |a: f64| a.clamp(settings.min_step, settings.max_step);

    // Feasible start: project onto the box only.
    let free = CostConfig { l1_weight: 0.0, ..cfg.clone() };
    let mut u = prox_g(warm_start, 1.0, &free);
    let mut ev = evaluate(model, horizon, cfg, initial, &u)?;
    let mut p = adjoint_of(model, horizon, cfg, &ev.output)?;
    let mut grad = adjoint::gradient(model, horizon, &p, &u, &cfg.control_target, cfg.lambda)?;
    let mut phi = ev.smooth + nonsmooth_cost(cfg, &u, tau);
    let mut history: VecDeque<f64> = VecDeque::from([phi]);
    let mut step = step_limits(1.0 / cfg.lambda);
    let mut iterations = 0;

    loop {
        let stat = stationarity(&u, &grad, cfg, tau);
        if stat <= settings.abs_tol + settings.rel_tol * control_norm(&u, tau) {
            return Ok(OptimizerResult {
                control: u,
                state: ev.state,
                adjoint: p,
                output: ev.output,
                cost: phi,
                stationarity: stat,
                iterations,
                wall_time: start.elapsed(),
            });
        }
        if iterations >= settings.max_iter {
            return Err(Error::NotConverged { iterations, stationarity: stat });
        }
        iterations += 1;

        let reference = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut trial_step = step;
        let (u_new, ev_new, phi_new) = loop {
            let cand = prox_g(&(&u - &grad * trial_step), trial_step, cfg);
            let ev_c = evaluate(model, horizon, cfg, initial, &cand)?;
            let phi_c = ev_c.smooth + nonsmooth_cost(cfg, &cand, tau);
            let d2 = control_norm(&(&cand - &u), tau).powi(2);
            let slack = 1e-14 * reference.abs().max(1.0);
            if phi_c <= reference - settings.armijo / (2.0 * trial_step) * d2 + slack || trial_step <= settings.min_step {
                break (cand, ev_c, phi_c);
            }
            trial_step *= 0.5;
        };
        let p_new = adjoint_of(model, horizon, cfg, &ev_new.output)?;
        let grad_new = adjoint::gradient(model, horizon, &p_new, &u_new, &cfg.control_target, cfg.lambda)?;

        let s = &u_new - &u;
        let yv = &grad_new - &grad;
        let sy = control_inner(&s, &yv, tau);
        let ss = control_inner(&s, &s, tau);
        step = if sy > 0.0 { step_limits(ss / sy) } else { settings.max_step };

        u = u_new;
        ev = ev_new;
        p = p_new;
        grad = grad_new;
        phi = phi_new;
        history.push_back(phi);
        while history.len() > settings.window.max(1) {
            history.pop_front();
        }
    }
}

/// Receding-horizon warm start: shift by `shift` nodes and repeat the last column.
pub fn shift_warm_start(u: &DMatrix<f64>, shift: usize, n_nodes: usize) -> DMatrix<f64> {
    let rho = u.nrows();
    let mut out = DMatrix::zeros(rho, n_nodes);
    if u.ncols() < 2 {
        return out;
    }
    for k in 1..n_nodes {
        let src = (k + shift).min(u.ncols() - 1);
        out.set_column(k, &u.column(src));
    }
    out
}
