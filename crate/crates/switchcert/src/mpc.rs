//! Receding-horizon drivers: full-order, certified FOM-ROM and certified ROM-ROM.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::certify::{self, ConstantsBundle, ControlBound, HorizonConstants, Intermediate, ReducedSolution, ResidualPath, StateBoundKind};
use crate::error::{Error, Result};
use crate::model::{Dynamics, FullModel};
use crate::ocp::{self, CostConfig, OptimizerResult, OptimizerSettings};
use crate::ops::SwitchedOperatorSet;
use crate::pod::{self, ReducedSystem, SnapshotSet};
use crate::signal::Horizon;
use crate::sparse;

/// Everything that defines one closed-loop experiment apart from the scheme.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub ops: Arc<SwitchedOperatorSet>,
    pub full: FullModel,
    /// Global grid and step modes.
    pub horizon: Horizon,
    /// Global targets, weights and box.
    pub cost: CostConfig,
    pub initial: DVector<f64>,
    pub constants: ConstantsBundle,
}

impl Scenario {
    pub fn new(ops: Arc<SwitchedOperatorSet>, horizon: Horizon, cost: CostConfig, initial: DVector<f64>) -> Result<Self> {
        cost.validate()?;
        if cost.n_nodes() != horizon.n_nodes() {
            return Err(Error::Dimension("cost and horizon lengths differ".into()));
        }
        if initial.len() != ops.dim() {
            return Err(Error::Dimension("initial state dimension".into()));
        }
        let full = FullModel::new(ops.clone(), horizon.tau())?;
        let constants = ConstantsBundle::compute(&ops, cost.lambda, cost.terminal_weight)?;
        Self::from_parts(full, horizon, cost, initial, constants)
    }

    /// Reuse an assembled model and precomputed constants.
    pub fn from_parts(full: FullModel, horizon: Horizon, cost: CostConfig, initial: DVector<f64>, constants: ConstantsBundle) -> Result<Self> {
        cost.validate()?;
        if cost.n_nodes() != horizon.n_nodes() || (full.tau() - horizon.tau()).abs() > 1e-14 {
            return Err(Error::Dimension("cost, model and horizon disagree".into()));
        }
        if initial.len() != full.dim() {
            return Err(Error::Dimension("initial state dimension".into()));
        }
        Ok(Self { ops: full.ops_arc().clone(), full, horizon, cost, initial, constants })
    }

    /// Mode whose mass norm measures the closed-loop state at node `k`.
    pub fn measure_mode(&self, k: usize) -> usize {
        if k < self.horizon.n_steps() {
            self.horizon.step_mode(k)
        } else {
            self.horizon.node_mode(k)
        }
    }

    pub fn mass_norm(&self, v: &DVector<f64>, mode: usize) -> f64 {
        sparse::quad_form(&self.ops.mode(mode).mass, v).max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    A,
    B,
    TildeB,
}

impl std::str::FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" | "delta_a" => Ok(Self::A),
            "b" | "delta_b" => Ok(Self::B),
            "tilde_b" | "tildeb" | "delta_tilde_b" => Ok(Self::TildeB),
            _ => Err(Error::Config(format!("unknown estimator {s}"))),
        }
    }
}

/// Per-step tolerance: constant or an explicit schedule (last value repeats).
#[derive(Debug, Clone, PartialEq)]
pub enum Tolerance {
    Constant(f64),
    Schedule(Vec<f64>),
}

impl Tolerance {
    pub fn at(&self, n: usize) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Schedule(v) => v.get(n).or(v.last()).copied().unwrap_or(f64::INFINITY),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    /// Sampling time in grid steps.
    pub sampling_steps: usize,
    /// Prediction horizon in grid steps.
    pub horizon_steps: usize,
    /// Number of MPC steps; `None` runs to the end of the grid.
    pub n_steps: Option<usize>,
    /// Threshold on `Δ_u(û, 0)`.
    pub control_tol: Tolerance,
    /// Threshold on the propagated bound `Δ_{t_{n+1}}`.
    pub state_tol: Tolerance,
    pub estimator: Estimator,
    pub pod_threshold: f64,
    pub pod_window: usize,
    pub optimizer: OptimizerSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            sampling_steps: 1,
            horizon_steps: 20,
            n_steps: None,
            control_tol: Tolerance::Constant(1e-2),
            state_tol: Tolerance::Constant(1e-2),
            estimator: Estimator::A,
            pod_threshold: 1.0 - 1e-12,
            pod_window: 7,
            optimizer: OptimizerSettings::default(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sampling_steps == 0 || self.horizon_steps <= self.sampling_steps {
            return Err(Error::Config("need 0 < sampling time < prediction horizon".into()));
        }
        for n in 0..4 {
            if !(self.control_tol.at(n) > 0.0) || !(self.state_tol.at(n) > 0.0) {
                return Err(Error::Config("tolerances must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn steps_for(&self, horizon: &Horizon) -> usize {
        let max = horizon.n_steps() / self.sampling_steps;
        self.n_steps.map_or(max, |n| n.min(max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Fom,
    FomRom,
    RomRom,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Fom => "fom",
            Self::FomRom => "fom-rom",
            Self::RomRom => "rom-rom",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub time: f64,
    /// Reduced dimension in use after the step (0 for the FOM scheme).
    pub rank: usize,
    pub accepted: bool,
    /// Rejected because no reduced model existed yet.
    pub forced: bool,
    pub delta_u0: f64,
    pub delta_u: f64,
    pub bound_before: f64,
    pub bound_after: f64,
    pub iterations: usize,
    pub stationarity: f64,
    pub subproblem_time: Duration,
    pub estimate_time: Duration,
    pub update_time: Duration,
}

#[derive(Debug, Clone)]
pub struct MpcResult {
    pub scheme: Scheme,
    /// `ρ × K'`, `N × K'`, `p × K'` over the simulated nodes.
    pub controls: DMatrix<f64>,
    pub states: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
    pub log: Vec<StepLog>,
    pub wall_time: Duration,
}

impl MpcResult {
    pub fn n_updates(&self) -> usize {
        self.log.iter().filter(|l| !l.accepted).count()
    }

    pub fn average_rank(&self) -> f64 {
        if self.log.is_empty() {
            return 0.0;
        }
        self.log.iter().map(|l| l.rank as f64).sum::<f64>() / self.log.len() as f64
    }

    /// Bound `Δ_{t_n}` at every sampling node, starting with `Δ_{t_0}`.
    pub fn bounds(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.log.iter().map(|l| l.bound_before).collect();
        if let Some(l) = self.log.last() {
            out.push(l.bound_after);
        }
        out
    }
}

struct Window {
    start: usize,
    horizon: Horizon,
    cost: CostConfig,
}

fn window(sc: &Scenario, cfg: &MpcConfig, n: usize) -> Result<Window> {
    let start = n * cfg.sampling_steps;
    let len = (cfg.horizon_steps + 1).min(sc.horizon.n_nodes() - start);
    let horizon = sc.horizon.window(start, len)?;
    let mut cost = sc.cost.window(start, len)?;
    cost.terminal_target = cost.output_target.column(len - 1).into_owned();
    Ok(Window { start, horizon, cost })
}

struct Recorder {
    controls: DMatrix<f64>,
    states: DMatrix<f64>,
    outputs: DMatrix<f64>,
}

impl Recorder {
    fn new(sc: &Scenario, nodes: usize) -> Self {
        let mut states = DMatrix::zeros(sc.ops.dim(), nodes);
        states.set_column(0, &sc.initial);
        Self { controls: DMatrix::zeros(sc.ops.n_inputs(), nodes), states, outputs: DMatrix::zeros(sc.ops.n_outputs(), nodes) }
    }

    /// Store nodes `start+1..=start+d` from window columns `1..=d`.
    fn record(&mut self, start: usize, d: usize, controls: &DMatrix<f64>, states: &DMatrix<f64>) {
        for j in 1..=d {
            self.controls.set_column(start + j, &controls.column(j));
            self.states.set_column(start + j, &states.column(j));
        }
    }

    fn finish(mut self, sc: &Scenario, scheme: Scheme, log: Vec<StepLog>, wall: Duration) -> Result<MpcResult> {
        let nodes = self.states.ncols();
        for k in 0..nodes {
            let col = self.states.column(k).into_owned();
            self.outputs.set_column(k, &sc.full.output_mul(sc.horizon.node_mode(k), &col));
        }
        Ok(MpcResult { scheme, controls: self.controls, states: self.states, outputs: self.outputs, log, wall_time: wall })
    }
}

fn solve_full(sc: &Scenario, w: &Window, initial: &DVector<f64>, warm: &DMatrix<f64>, cfg: &MpcConfig) -> Result<OptimizerResult> {
    ocp::solve_ocp(&sc.full, &w.horizon, &w.cost, initial, warm, &cfg.optimizer).map_err(|e| step_error(w.start, e))
}

fn step_error(start: usize, e: Error) -> Error {
    match e {
        Error::NotConverged { iterations, stationarity } => Error::Invalid(format!(
            "subproblem at node {start} did not converge ({iterations} iterations, stationarity {stationarity:e})"
        )),
        other => other,
    }
}

/// Classic receding-horizon loop on the full model.
pub fn run_fom_mpc(sc: &Scenario, cfg: &MpcConfig) -> Result<MpcResult> {
    cfg.validate()?;
    let clock = Instant::now();
    let n_steps = cfg.steps_for(&sc.horizon);
    let d = cfg.sampling_steps;
    let mut rec = Recorder::new(sc, n_steps * d + 1);
    let mut theta = sc.initial.clone();
    let mut warm = DMatrix::zeros(sc.ops.n_inputs(), 2);
    let mut log = Vec::with_capacity(n_steps);
    for n in 0..n_steps {
        let w = window(sc, cfg, n)?;
        let warm_w = ocp::shift_warm_start(&warm, d, w.horizon.n_nodes());
        let res = solve_full(sc, &w, &theta, &warm_w, cfg)?;
        rec.record(w.start, d, &res.control, &res.state.values);
        theta = res.state.at(d);
        log.push(StepLog {
            step: n,
            time: sc.horizon.grid().node(w.start),
            rank: 0,
            accepted: true,
            forced: false,
            delta_u0: 0.0,
            delta_u: 0.0,
            bound_before: 0.0,
            bound_after: 0.0,
            iterations: res.iterations,
            stationarity: res.stationarity,
            subproblem_time: res.wall_time,
            estimate_time: Duration::ZERO,
            update_time: Duration::ZERO,
        });
        warm = res.control;
    }
    rec.finish(sc, Scheme::Fom, log, clock.elapsed())
}

/// Append the optimal pair, recompute POD and re-project.
pub fn update_rom(sc: &Scenario, snaps: &mut SnapshotSet, res: &OptimizerResult, threshold: f64) -> Result<ReducedSystem> {
    snaps.push_pair(&res.state.values, &res.adjoint, sc.horizon.tau());
    let basis = pod::compute_pod(snaps, sc.ops.v_inner())?;
    let (r, _) = basis.select_rank(threshold);
    pod::galerkin_project(sc.ops.clone(), basis.truncated(r), sc.horizon.tau())
}

/// Scaling of the squared bound when the next window starts in a new mode.
fn switch_factor(sc: &Scenario, node: usize) -> f64 {
    if sc.horizon.is_switch(node) {
        sc.constants.c(sc.horizon.step_mode(node), sc.horizon.step_mode(node - 1))
    } else {
        1.0
    }
}

struct Estimate {
    bound: ControlBound,
    residuals: Vec<f64>,
    check: Option<Intermediate>,
}

#[allow(clippy::too_many_arguments)]
fn estimate(
    sc: &Scenario,
    rom: &ReducedSystem,
    w: &Window,
    hc: &HorizonConstants,
    start_state: &DVector<f64>,
    red: &OptimizerResult,
    init_error: f64,
    estimator: Estimator,
    need_residuals: bool,
) -> Result<Estimate> {
    let reduced = ReducedSolution { control: &red.control, state: &red.state.values, output: &red.output, adjoint: &red.adjoint };
    let residuals = if need_residuals || estimator == Estimator::TildeB {
        certify::state_residuals(rom, &w.horizon, &red.control, &red.state.values, ResidualPath::OfflineOnline)?
    } else {
        Vec::new()
    };
    let (bound, check) = match estimator {
        Estimator::A | Estimator::B => {
            let check = certify::intermediate(&sc.full, &w.horizon, start_state, &red.control)?;
            let b = if estimator == Estimator::A {
                certify::delta_a(&sc.full, rom, &w.horizon, &w.cost, &reduced, &check, hc)?
            } else {
                certify::delta_b(&sc.full, rom, &w.horizon, &w.cost, &reduced, &check, hc)?
            };
            (b, Some(check))
        }
        Estimator::TildeB => {
            let dt = certify::delta_theta(&residuals, init_error, hc, &w.horizon, w.horizon.n_steps());
            let ares = certify::adjoint_residuals(rom, &w.horizon, &w.cost, &red.output, &red.adjoint, ResidualPath::OfflineOnline)?;
            let dp = certify::delta_p(&ares, hc, &w.horizon);
            (certify::tilde_delta_b(dt, dp, hc), None)
        }
    };
    Ok(Estimate { bound, residuals, check })
}

/// Certified reduced MPC (FOM-ROM or ROM-ROM) with estimator-triggered rebuilds.
pub fn run_reduced_mpc(sc: &Scenario, cfg: &MpcConfig, scheme: Scheme, initial_rom: Option<ReducedSystem>) -> Result<MpcResult> {
    if scheme == Scheme::Fom {
        return run_fom_mpc(sc, cfg);
    }
    cfg.validate()?;
    let clock = Instant::now();
    let n_steps = cfg.steps_for(&sc.horizon);
    let d = cfg.sampling_steps;
    let kind = if scheme == Scheme::FomRom { StateBoundKind::FomRom } else { StateBoundKind::RomRom };
    let mut rec = Recorder::new(sc, n_steps * d + 1);
    let mut snaps = SnapshotSet::new(cfg.pod_window);
    let mut rom = initial_rom;
    // FOM-ROM: θ̌ (full closed loop); ROM-ROM: lifted reduced closed loop.
    let mut theta = sc.initial.clone();
    let mut bound = 0.0;
    if let (Some(r), Scheme::RomRom) = (&rom, scheme) {
        // Δ_{t_0} = ‖θ_0 − Πθ_0‖ and the reduced loop starts from Πθ_0
        let (_, lifted) = r.project_initial(&theta);
        bound = sc.mass_norm(&(&theta - &lifted), sc.measure_mode(0));
        theta = lifted;
        rec.states.set_column(0, &theta);
    }
    let mut warm = DMatrix::zeros(sc.ops.n_inputs(), 2);
    let mut log = Vec::with_capacity(n_steps);

    for n in 0..n_steps {
        let w = window(sc, cfg, n)?;
        let warm_w = ocp::shift_warm_start(&warm, d, w.horizon.n_nodes());
        let mode0 = w.horizon.step_mode(0);
        let next_node = w.start + d;
        let mut entry = StepLog {
            step: n,
            time: sc.horizon.grid().node(w.start),
            rank: rom.as_ref().map_or(0, |r| r.dim()),
            accepted: false,
            forced: rom.is_none(),
            delta_u0: f64::NAN,
            delta_u: f64::NAN,
            bound_before: bound,
            bound_after: 0.0,
            iterations: 0,
            stationarity: 0.0,
            subproblem_time: Duration::ZERO,
            estimate_time: Duration::ZERO,
            update_time: Duration::ZERO,
        };

        let mut accepted = None;
        if let Some(r) = &rom {
            let (coeffs, lifted) = r.project_initial(&theta);
            let defect = sc.mass_norm(&(&theta - &lifted), mode0);
            let red = ocp::solve_ocp(r.model(), &w.horizon, &w.cost, &coeffs, &warm_w, &cfg.optimizer)
                .map_err(|e| step_error(w.start, e))?;
            entry.iterations = red.iterations;
            entry.stationarity = red.stationarity;
            entry.subproblem_time = red.wall_time;

            let t_est = Instant::now();
            let hc = sc.constants.for_horizon(&w.horizon);
            let est = estimate(sc, r, &w, &hc, &theta, &red, defect, cfg.estimator, kind == StateBoundKind::RomRom)?;
            let du0 = est.bound.at(0.0);
            let du = est.bound.at(bound);
            let proj = if kind == StateBoundKind::RomRom { defect } else { 0.0 };
            let next = certify::mpc_init_bound(kind, du, bound, &est.residuals, proj, &hc, &w.horizon, d)
                * switch_factor(sc, next_node).sqrt();
            entry.estimate_time = t_est.elapsed();
            entry.delta_u0 = du0;
            entry.delta_u = du;
            if du0 <= cfg.control_tol.at(n) && next <= cfg.state_tol.at(n) {
                let states = match (kind, est.check) {
                    (StateBoundKind::FomRom, Some(check)) => check.state,
                    (StateBoundKind::FomRom, None) => {
                        crate::forward::solve_state_values(&sc.full, &w.horizon, &theta, &red.control)?
                    }
                    (StateBoundKind::RomRom, _) => r.lift_all(&red.state.values),
                };
                accepted = Some((red.control, states, next));
            }
        }

        match accepted {
            Some((control, states, next)) => {
                rec.record(w.start, d, &control, &states);
                theta = states.column(d).into_owned();
                bound = next;
                entry.accepted = true;
                warm = control;
            }
            None => {
                let res = solve_full(sc, &w, &theta, &warm_w, cfg)?;
                entry.iterations += res.iterations;
                entry.stationarity = res.stationarity;
                entry.subproblem_time += res.wall_time;
                rec.record(w.start, d, &res.control, &res.state.values);
                theta = res.state.at(d);
                let t_up = Instant::now();
                rom = Some(update_rom(sc, &mut snaps, &res, cfg.pod_threshold)?);
                entry.update_time = t_up.elapsed();
                bound = 0.0;
                warm = res.control;
            }
        }
        entry.bound_after = bound;
        entry.rank = rom.as_ref().map_or(0, |r| r.dim());
        log.push(entry);
    }
    rec.finish(sc, scheme, log, clock.elapsed())
}

pub fn run_fom_rom_mpc(sc: &Scenario, cfg: &MpcConfig) -> Result<MpcResult> {
    run_reduced_mpc(sc, cfg, Scheme::FomRom, None)
}

pub fn run_rom_rom_mpc(sc: &Scenario, cfg: &MpcConfig) -> Result<MpcResult> {
    run_reduced_mpc(sc, cfg, Scheme::RomRom, None)
}

/// True closed-loop errors `‖θ_ref(t_n) − θ_scheme(t_n)‖_m` against a
/// full-order reference that restarts from the scheme state after every reset.
pub fn shadow_errors(sc: &Scenario, cfg: &MpcConfig, result: &MpcResult) -> Result<Vec<f64>> {
    let d = cfg.sampling_steps;
    let mut reference = sc.initial.clone();
    let mut warm = DMatrix::zeros(sc.ops.n_inputs(), 2);
    let mut errors = Vec::with_capacity(result.log.len() + 1);
    for (n, entry) in result.log.iter().enumerate() {
        let node = n * d;
        let scheme_state = result.states.column(node).into_owned();
        errors.push(sc.mass_norm(&(&reference - &scheme_state), sc.measure_mode(node)));
        if entry.accepted {
            let w = window(sc, cfg, n)?;
            let warm_w = ocp::shift_warm_start(&warm, d, w.horizon.n_nodes());
            let res = solve_full(sc, &w, &reference, &warm_w, cfg)?;
            reference = res.state.at(d);
            warm = res.control;
        } else {
            reference = result.states.column(node + d).into_owned();
            warm = result.controls.columns(node, 2).into_owned();
        }
    }
    let last = result.log.len() * d;
    let scheme_state = result.states.column(last).into_owned();
    errors.push(sc.mass_norm(&(&reference - &scheme_state), sc.measure_mode(last)));
    Ok(errors)
}
