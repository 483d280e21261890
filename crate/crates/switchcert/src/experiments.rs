//! Benchmark scenarios, the open-loop bound study and the MPC scheme comparison.

use std::fs;
use std::path::Path;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::certify::{self, ConstantsBundle, ReducedSolution, ResidualPath, StateBoundKind};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fem::{self, Assembly};
use crate::metrics::{self, Metrics};
use crate::model::{Dynamics, FullModel};
use crate::mpc::{self, MpcConfig, MpcResult, Scenario, Scheme, Tolerance};
use crate::norms::{self, Form};
use crate::ocp::{self, CostConfig, OptimizerSettings};
use crate::pod::{self, SnapshotSet};
use crate::signal::{Horizon, SwitchingSignal, TimeGrid};
use crate::sparse;
use crate::trajectory::{self, Kind, Trajectory};

/// Slack used when comparing a bound with a measured error.
pub const BOUND_SLACK: f64 = 1e-10;

/// The assembled two-room benchmark on the full simulation grid.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub assembly: Assembly,
    pub full: FullModel,
    pub signal: SwitchingSignal,
    pub horizon: Horizon,
    pub cost: CostConfig,
    pub constants: ConstantsBundle,
}

impl Benchmark {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let assembly = fem::assemble(&cfg.benchmark)?;
        let ops = assembly.ops.clone();
        let full = FullModel::new(ops.clone(), cfg.tau)?;
        let grid = TimeGrid::new(0.0, cfg.tau, cfg.n_steps() + 1)?;
        let signal = SwitchingSignal::periodic(0.0, grid.t_end(), cfg.switch_period, &cfg.mode_cycle)?;
        let horizon = Horizon::new(&signal, grid)?;
        let output_target = fem::compute_targets(&full, &horizon)?;
        let rho = ops.n_inputs();
        let cost = CostConfig {
            terminal_target: output_target.column(horizon.n_nodes() - 1).into_owned(),
            output_target,
            control_target: DMatrix::zeros(rho, horizon.n_nodes()),
            lambda: cfg.lambda,
            terminal_weight: cfg.terminal_weight,
            l1_weight: cfg.l1_weight,
            lower: DVector::from_element(rho, cfg.lower),
            upper: DVector::from_element(rho, cfg.upper),
        };
        let constants = ConstantsBundle::compute(&ops, cfg.lambda, cfg.terminal_weight)?;
        Ok(Self { assembly, full, signal, horizon, cost, constants })
    }

    pub fn dim(&self) -> usize {
        self.full.dim()
    }

    /// Closed-loop scenario starting from `initial`.
    pub fn scenario(&self, initial: DVector<f64>) -> Result<Scenario> {
        Scenario::from_parts(self.full.clone(), self.horizon.clone(), self.cost.clone(), initial, self.constants.clone())
    }

    /// Horizon and cost of the open-loop problem on `steps` steps from node `start`.
    pub fn open_loop_problem(&self, start: usize, steps: usize) -> Result<(Horizon, CostConfig)> {
        let horizon = self.horizon.window(start, steps + 1)?;
        let mut cost = self.cost.window(start, steps + 1)?;
        cost.terminal_target = cost.output_target.column(steps).into_owned();
        Ok((horizon, cost))
    }

    /// Seeded standard-normal vector scaled to unit norm in the mass form of the first mode.
    pub fn random_initial(&self, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(&mut rng));
        let mode = self.horizon.step_mode(0);
        let n = sparse::quad_form(&self.full.ops().mode(mode).mass, &v).sqrt();
        v / n
    }
}

pub fn mpc_config(cfg: &ExperimentConfig, tol: f64, estimator: mpc::Estimator) -> MpcConfig {
    MpcConfig {
        sampling_steps: cfg.sampling_steps,
        horizon_steps: cfg.horizon_steps,
        n_steps: cfg.mpc_steps,
        control_tol: Tolerance::Constant(tol),
        state_tol: Tolerance::Constant(tol),
        estimator,
        pod_threshold: cfg.pod_threshold,
        pod_window: cfg.pod_window,
        optimizer: cfg.optimizer,
    }
}

/// True errors and bounds of one reduced open-loop solve.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopRow {
    pub seed: u64,
    pub rank: usize,
    pub state_error: f64,
    pub delta_theta: f64,
    pub adjoint_error: f64,
    pub delta_p: f64,
    pub control_error: f64,
    pub delta_a: f64,
    pub delta_b: f64,
    pub delta_tilde_b: f64,
    /// Largest ratio true/bound over the nodes for the FOM-ROM optimal-state bound.
    pub state_bound_fom_rom: f64,
    /// Same for the ROM-ROM optimal-state bound.
    pub state_bound_rom_rom: f64,
    /// Nodes where an optimal-state bound falls below the measured error.
    pub state_bound_violations: usize,
}

impl OpenLoopRow {
    pub fn eff_theta(&self) -> f64 {
        self.state_error / self.delta_theta
    }
    pub fn eff_p(&self) -> f64 {
        self.adjoint_error / self.delta_p
    }
    pub fn eff_a(&self) -> f64 {
        self.control_error / self.delta_a
    }
    pub fn eff_b(&self) -> f64 {
        self.control_error / self.delta_b
    }
    pub fn eff_tilde_b(&self) -> f64 {
        self.control_error / self.delta_tilde_b
    }

    /// Every bound dominates its measured error.
    pub fn is_valid(&self) -> bool {
        let ok = |e: f64, b: f64| e <= b + BOUND_SLACK;
        ok(self.state_error, self.delta_theta)
            && ok(self.adjoint_error, self.delta_p)
            && ok(self.control_error, self.delta_a.min(self.delta_b))
            && ok(self.control_error, self.delta_tilde_b)
            && self.state_bound_violations == 0
    }
}

/// Full-order optimum for one initial value plus everything needed to sweep ranks.
pub struct OpenLoopCase<'a> {
    pub bench: &'a Benchmark,
    pub horizon: Horizon,
    pub cost: CostConfig,
    pub seed: u64,
    pub initial: DVector<f64>,
    pub optimum: ocp::OptimizerResult,
    pub pod: pod::PodBasis,
}

impl<'a> OpenLoopCase<'a> {
    pub fn new(bench: &'a Benchmark, start: usize, steps: usize, seed: u64, settings: &OptimizerSettings) -> Result<Self> {
        let (horizon, cost) = bench.open_loop_problem(start, steps)?;
        let initial = bench.random_initial(seed);
        let warm = DMatrix::zeros(bench.full.n_inputs(), horizon.n_nodes());
        let optimum = ocp::solve_ocp(&bench.full, &horizon, &cost, &initial, &warm, settings)?;
        let mut snaps = SnapshotSet::new(1);
        snaps.push_pair(&optimum.state.values, &optimum.adjoint, horizon.tau());
        let pod = pod::compute_pod(&snaps, bench.full.ops().v_inner())?;
        Ok(Self { bench, horizon, cost, seed, initial, optimum, pod })
    }

    /// Reduced solve at rank `r` with every bound and its measured counterpart.
    pub fn evaluate(&self, r: usize, settings: &OptimizerSettings) -> Result<OpenLoopRow> {
        if r == 0 || r > self.pod.rank() {
            return Err(Error::Invalid(format!("rank {r} outside 1..={}", self.pod.rank())));
        }
        let b = self.bench;
        let ops = b.full.ops();
        let h = &self.horizon;
        let tau = h.tau();
        let rom = pod::galerkin_project(b.full.ops_arc().clone(), self.pod.truncated(r), tau)?;
        let (c0, lifted0) = rom.project_initial(&self.initial);
        let warm = DMatrix::zeros(b.full.n_inputs(), h.n_nodes());
        let red = ocp::solve_ocp(rom.model(), h, &self.cost, &c0, &warm, settings)?;
        let hc = b.constants.for_horizon(h);
        let reduced = ReducedSolution { control: &red.control, state: &red.state.values, output: &red.output, adjoint: &red.adjoint };

        let check = certify::intermediate(&b.full, h, &self.initial, &red.control)?;
        let delta_a = certify::delta_a(&b.full, &rom, h, &self.cost, &reduced, &check, &hc)?.at(0.0);
        let delta_b = certify::delta_b(&b.full, &rom, h, &self.cost, &reduced, &check, &hc)?.at(0.0);
        let defect = norms::mode_norm(ops, &(&self.initial - &lifted0), Form::Mass, h.step_mode(0));
        let res = certify::state_residuals(&rom, h, &red.control, &red.state.values, ResidualPath::OfflineOnline)?;
        let delta_theta = certify::delta_theta(&res, defect, &hc, h, h.n_steps());
        let ares = certify::adjoint_residuals(&rom, h, &self.cost, &red.output, &red.adjoint, ResidualPath::OfflineOnline)?;
        let delta_p = certify::delta_p(&ares, &hc, h);
        let delta_tilde_b = certify::tilde_delta_b(delta_theta, delta_p, &hc).at(0.0);

        // measured errors
        let lifted = rom.lift_all(&red.state.values);
        let e = Trajectory::new(*h.grid(), Kind::State, &check.state - &lifted)?;
        let last = h.n_nodes() - 1;
        let e_t = norms::mode_norm(ops, &e.at(last), Form::Mass, h.node_mode(last));
        let e_a = norms::weighted_spacetime_norm(ops, &e, h, Form::Stiffness, &hc.omega, h.n_steps())?;
        let state_error = (e_t * e_t + e_a * e_a).sqrt();

        let p_check = ocp::adjoint_of(&b.full, h, &self.cost, &red.output)?;
        let eps = Trajectory::new(*h.grid(), Kind::Adjoint, &p_check.values - rom.lift_all(&red.adjoint.values))?;
        let eps0 = norms::mode_norm(ops, &eps.at(0), Form::Mass, h.step_mode(0));
        let eps_a = norms::weighted_spacetime_norm(ops, &eps, h, Form::Stiffness, &hc.omega_tilde, h.n_steps())?;
        let adjoint_error = (eps0 * eps0 + eps_a * eps_a).sqrt();

        let control_error = ocp::control_norm(&(&self.optimum.control - &red.control), tau);

        let du_fom = delta_a.min(delta_b);
        let mut worst = [0.0f64; 2];
        let mut violations = 0;
        for k in 1..h.n_nodes() {
            let mode = h.node_mode(k);
            let opt = self.optimum.state.at(k);
            let t14 = norms::mode_norm(ops, &(&opt - check.state.column(k)), Form::Mass, mode);
            let b14 = certify::optimal_state_bound(StateBoundKind::FomRom, du_fom, 0.0, &[], 0.0, &hc, h, k);
            let t15 = norms::mode_norm(ops, &(&opt - lifted.column(k)), Form::Mass, mode);
            let b15 = certify::optimal_state_bound(StateBoundKind::RomRom, delta_tilde_b, 0.0, &res, defect, &hc, h, k);
            for (slot, (t, bd)) in [(t14, b14), (t15, b15)].into_iter().enumerate() {
                if t > bd + BOUND_SLACK {
                    violations += 1;
                }
                if bd > 0.0 {
                    worst[slot] = worst[slot].max(t / bd);
                }
            }
        }

        Ok(OpenLoopRow {
            seed: self.seed,
            rank: r,
            state_error,
            delta_theta,
            adjoint_error,
            delta_p,
            control_error,
            delta_a,
            delta_b,
            delta_tilde_b,
            state_bound_fom_rom: worst[0],
            state_bound_rom_rom: worst[1],
            state_bound_violations: violations,
        })
    }
}

#[derive(Debug, Clone)]
pub struct OpenLoopStudy {
    pub rows: Vec<OpenLoopRow>,
    /// Requested ranks beyond the numerical POD rank, per seed.
    pub skipped: Vec<(u64, usize)>,
}

impl OpenLoopStudy {
    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_valid()).count()
    }
}

pub fn run_openloop_study(bench: &Benchmark, cfg: &ExperimentConfig) -> Result<OpenLoopStudy> {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for i in 0..cfg.openloop_seeds as u64 {
        let seed = cfg.seed + i;
        let case = OpenLoopCase::new(bench, cfg.openloop_start, cfg.openloop_steps, seed, &cfg.optimizer)?;
        for &r in &cfg.openloop_ranks {
            if r == 0 || r > case.pod.rank() {
                skipped.push((seed, r));
                continue;
            }
            rows.push(case.evaluate(r, &cfg.optimizer)?);
        }
    }
    Ok(OpenLoopStudy { rows, skipped })
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn write_openloop_csv(study: &OpenLoopStudy, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("openloop.csv"))?;
    w.write_record([
        "config_hash", "seed", "rank", "state_error", "delta_theta", "eff_theta", "adjoint_error", "delta_p", "eff_p",
        "control_error", "delta_a", "eff_a", "delta_b", "eff_b", "delta_tilde_b", "eff_tilde_b", "state_ratio_fom_rom",
        "state_ratio_rom_rom", "valid",
    ])?;
    let hash = cfg.hash();
    for r in &study.rows {
        w.write_record([
            hash.clone(),
            r.seed.to_string(),
            r.rank.to_string(),
            num(r.state_error),
            num(r.delta_theta),
            num(r.eff_theta()),
            num(r.adjoint_error),
            num(r.delta_p),
            num(r.eff_p()),
            num(r.control_error),
            num(r.delta_a),
            num(r.eff_a()),
            num(r.delta_b),
            num(r.eff_b()),
            num(r.delta_tilde_b),
            num(r.eff_tilde_b()),
            num(r.state_bound_fom_rom),
            num(r.state_bound_rom_rom),
            r.is_valid().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One reduced scheme at one tolerance, compared with the full-order loop.
#[derive(Debug, Clone)]
pub struct SchemeRun {
    pub tolerance: f64,
    pub result: MpcResult,
    pub metrics: Metrics,
    /// Measured closed-loop errors per sampling node when certification was requested.
    pub shadow: Option<Vec<f64>>,
}

impl SchemeRun {
    pub fn speedup(&self, fom: &MpcResult) -> f64 {
        fom.wall_time.as_secs_f64() / self.result.wall_time.as_secs_f64()
    }

    /// Sampling nodes whose measured error exceeds the bound, plus rejected
    /// steps that did not reset the bound.
    pub fn certificate_violations(&self) -> usize {
        let bounds = self.result.bounds();
        let over = self
            .shadow
            .as_ref()
            .map_or(0, |s| s.iter().zip(&bounds).filter(|(e, b)| **e > **b + BOUND_SLACK).count());
        let no_reset = self.result.log.iter().filter(|l| !l.accepted && l.bound_after != 0.0).count();
        over + no_reset
    }
}

#[derive(Debug, Clone)]
pub struct MpcComparison {
    pub fom: MpcResult,
    pub runs: Vec<SchemeRun>,
}

impl MpcComparison {
    pub fn violations(&self) -> usize {
        self.runs.iter().map(SchemeRun::certificate_violations).sum()
    }

    pub fn find(&self, scheme: Scheme, tol: f64) -> Option<&SchemeRun> {
        self.runs.iter().find(|r| r.result.scheme == scheme && r.tolerance == tol)
    }
}

/// Closed-loop start used by the comparison.
pub fn mpc_initial(bench: &Benchmark) -> DVector<f64> {
    DVector::zeros(bench.dim())
}

pub fn run_scheme(bench: &Benchmark, cfg: &ExperimentConfig, fom: &MpcResult, scheme: Scheme, tol: f64) -> Result<SchemeRun> {
    let sc = bench.scenario(mpc_initial(bench))?;
    let estimator = if scheme == Scheme::FomRom { cfg.fom_rom_estimator } else { cfg.rom_rom_estimator };
    let mcfg = mpc_config(cfg, tol, estimator);
    let result = mpc::run_reduced_mpc(&sc, &mcfg, scheme, None)?;
    let metrics = metrics::compute_metrics(sc.full.ops(), &sc.cost, sc.horizon.tau(), fom, &result)?;
    let shadow = if cfg.certify { Some(mpc::shadow_errors(&sc, &mcfg, &result)?) } else { None };
    Ok(SchemeRun { tolerance: tol, result, metrics, shadow })
}

pub fn run_mpc_comparison(bench: &Benchmark, cfg: &ExperimentConfig) -> Result<MpcComparison> {
    let sc = bench.scenario(mpc_initial(bench))?;
    let fom = mpc::run_fom_mpc(&sc, &mpc_config(cfg, 1.0, cfg.fom_rom_estimator))?;
    let mut runs = Vec::new();
    for &tol in &cfg.tolerances {
        for scheme in [Scheme::FomRom, Scheme::RomRom] {
            runs.push(run_scheme(bench, cfg, &fom, scheme, tol)?);
        }
    }
    Ok(MpcComparison { fom, runs })
}

fn secs(d: Duration) -> String {
    format!("{:.6}", d.as_secs_f64())
}

/// `summary.csv`, `trace.csv` and the closed-loop controls/outputs are
/// deterministic; wall-clock data goes to `timing.csv`.
pub fn write_mpc_csv(cmp: &MpcComparison, cfg: &ExperimentConfig, horizon: &Horizon, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let hash = cfg.hash();
    let seed = cfg.seed.to_string();

    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["config_hash", "seed", "scheme", "tolerance", "e_u", "e_theta", "e_y", "e_j", "average_r", "updates", "e_j_le_e_y", "certificate_violations"])?;
    for r in &cmp.runs {
        let m = &r.metrics;
        w.write_record([
            hash.clone(),
            seed.clone(),
            r.result.scheme.name().into(),
            num(r.tolerance),
            num(m.e_u),
            num(m.e_theta),
            num(m.e_y),
            num(m.e_j),
            format!("{:.3}", r.result.average_rank()),
            r.result.n_updates().to_string(),
            (m.e_j <= m.e_y).to_string(),
            if r.shadow.is_some() { r.certificate_violations().to_string() } else { "unchecked".into() },
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("trace.csv"))?;
    w.write_record(["config_hash", "seed", "scheme", "tolerance", "step", "time", "rank", "accepted", "forced", "delta_u0", "delta_u", "bound", "bound_next", "measured_error", "iterations", "stationarity"])?;
    for r in &cmp.runs {
        for (n, l) in r.result.log.iter().enumerate() {
            let measured = r.shadow.as_ref().map_or(String::new(), |s| num(s[n]));
            w.write_record([
                hash.clone(),
                seed.clone(),
                r.result.scheme.name().into(),
                num(r.tolerance),
                l.step.to_string(),
                format!("{}", l.time),
                l.rank.to_string(),
                l.accepted.to_string(),
                l.forced.to_string(),
                num(l.delta_u0),
                num(l.delta_u),
                num(l.bound_before),
                num(l.bound_after),
                measured,
                l.iterations.to_string(),
                num(l.stationarity),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("timing.csv"))?;
    w.write_record(["config_hash", "seed", "scheme", "tolerance", "wall_s", "speedup", "subproblem_s", "estimate_s", "update_s"])?;
    let total = |r: &MpcResult, f: fn(&mpc::StepLog) -> Duration| r.log.iter().map(f).sum::<Duration>();
    let mut timing_row = |r: &MpcResult, tol: String, speedup: f64| -> Result<()> {
        w.write_record([
            hash.clone(),
            seed.clone(),
            r.scheme.name().into(),
            tol,
            secs(r.wall_time),
            format!("{speedup:.3}"),
            secs(total(r, |l| l.subproblem_time)),
            secs(total(r, |l| l.estimate_time)),
            secs(total(r, |l| l.update_time)),
        ])?;
        Ok(())
    };
    timing_row(&cmp.fom, String::new(), 1.0)?;
    for r in &cmp.runs {
        timing_row(&r.result, num(r.tolerance), r.speedup(&cmp.fom))?;
    }
    w.flush()?;

    let grid = TimeGrid::new(horizon.grid().t_start(), horizon.tau(), cmp.fom.controls.ncols())?;
    trajectory::write_matrix_csv(&dir.join("fom_controls.csv"), &grid, &cmp.fom.controls, "u")?;
    trajectory::write_matrix_csv(&dir.join("fom_outputs.csv"), &grid, &cmp.fom.outputs, "y")?;
    for r in &cmp.runs {
        let tag = format!("{}_{:e}", r.result.scheme.name(), r.tolerance);
        trajectory::write_matrix_csv(&dir.join(format!("{tag}_controls.csv")), &grid, &r.result.controls, "u")?;
        trajectory::write_matrix_csv(&dir.join(format!("{tag}_outputs.csv")), &grid, &r.result.outputs, "y")?;
    }
    fs::write(dir.join("config.toml"), cfg.to_flat_string())?;
    Ok(())
}
