mod common;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use switchcert::certify::{self, ConstantsBundle, ReducedSolution, ResidualPath, StateBoundKind};
use switchcert::norms::{self, Form};
use switchcert::ocp::{self, CostConfig, OptimizerSettings};
use switchcert::pod::{self, ReducedSystem, SnapshotSet};
use switchcert::{sparse, Dynamics, FullModel, Horizon, Kind, TimeGrid, Trajectory};

use common::*;

fn dense_sym_max(a: DMatrix<f64>) -> f64 {
    a.symmetric_eigen().eigenvalues.max()
}

/// `λmax(Xᵀ F⁻¹ X)` with a dense Cholesky of `F`.
fn dense_congruence(form: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let z = form.clone().cholesky().unwrap().solve(x);
    let g = x.transpose() * z;
    dense_sym_max((&g + g.transpose()) * 0.5)
}

fn pencil(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let l = b.clone().cholesky().unwrap().l();
    let li = l.try_inverse().unwrap();
    let c = &li * a * li.transpose();
    dense_sym_max((&c + c.transpose()) * 0.5)
}

fn rom_from_optimum(model: &FullModel, h: &Horizon, cost: &CostConfig, x0: &DVector<f64>, r: usize) -> ReducedSystem {
    let opt = ocp::solve_ocp(model, h, cost, x0, &DMatrix::zeros(model.n_inputs(), h.n_nodes()), &OptimizerSettings::default()).unwrap();
    let mut snaps = SnapshotSet::new(1);
    snaps.push_pair(&opt.state.values, &opt.adjoint, h.tau());
    let basis = pod::compute_pod(&snaps, model.ops().v_inner()).unwrap();
    pod::galerkin_project(model.ops_arc().clone(), basis.truncated(r), h.tau()).unwrap()
}

fn single_mode(n_nodes: usize, tau: f64) -> Horizon {
    Horizon::from_modes(TimeGrid::new(0.0, tau, n_nodes).unwrap(), vec![0; n_nodes - 1]).unwrap()
}

#[test]
fn constants_match_dense_oracles() {
    let (model, _) = small_problem(41);
    let ops = model.ops();
    let b = ConstantsBundle::compute(ops, 0.1, 0.5).unwrap();
    let m: Vec<DMatrix<f64>> = (0..2).map(|i| sparse::to_dense(&ops.mode(i).mass)).collect();
    assert_relative_eq!(b.c(0, 1), pencil(&m[0], &m[1]), max_relative = 1e-8);
    assert_relative_eq!(b.c(1, 0), pencil(&m[1], &m[0]), max_relative = 1e-8);
    assert_eq!(b.c(0, 0), 1.0);
    for i in 0..2 {
        let a = sparse::to_dense(&ops.mode(i).stiffness);
        let s = (&a + a.transpose()) * 0.5;
        let bi = sparse::to_dense(&ops.mode(i).input);
        let ct = ops.mode(i).output.transpose();
        assert_relative_eq!(b.input_a[i], dense_congruence(&s, &bi), max_relative = 1e-8);
        assert_relative_eq!(b.output_a[i], dense_congruence(&s, &ct), max_relative = 1e-8);
        assert_relative_eq!(b.output_m[i], dense_congruence(&m[i], &ct), max_relative = 1e-8);
    }
    assert!(ConstantsBundle::compute(ops, 0.0, 0.5).is_err());
}

#[test]
fn switching_weights_by_hand() {
    let (model, h) = small_problem(42);
    let b = ConstantsBundle::compute(model.ops(), 0.1, 0.5).unwrap();
    let hc = b.for_horizon(&h);
    // modes 0,1,0,1 on four intervals
    let f = [b.c(1, 0), b.c(0, 1), b.c(1, 0)];
    assert_eq!(hc.switch_factors, f.to_vec());
    let omega = [f[0] * f[1] * f[2], f[1] * f[2], f[2], 1.0];
    let tilde = [1.0, 2.0 * f[0], 4.0 * f[0] * f[1], 8.0 * f[0] * f[1] * f[2]];
    for i in 0..4 {
        assert_relative_eq!(hc.omega[i], omega[i], max_relative = 1e-14);
        assert_relative_eq!(hc.omega_tilde[i], tilde[i], max_relative = 1e-14);
    }
    assert_eq!(hc.omega_upto(2), vec![f[0], 1.0]);
    let ga = b.input_a[0].max(b.input_a[1]);
    assert_relative_eq!(hc.c4(2), (f[0] * ga).max(ga), max_relative = 1e-14);
}

#[test]
fn single_mode_degenerates() {
    let (model, _) = small_problem(43);
    let b = ConstantsBundle::compute(model.ops(), 0.2, 0.7).unwrap();
    let h = single_mode(21, 0.05);
    let hc = b.for_horizon(&h);
    assert!(hc.switch_factors.is_empty());
    assert_eq!(hc.omega, vec![1.0]);
    assert_eq!(hc.omega_tilde, vec![1.0]);
    let (ga, om, oa) = (b.input_a[0], b.output_m[0], b.output_a[0]);
    assert_relative_eq!(hc.c1, (oa / 2.0).max(0.7 * om), max_relative = 1e-14);
    assert_relative_eq!(hc.c2, ga / 0.04, max_relative = 1e-14);
    assert_relative_eq!(hc.c3, (oa / 0.2).max(0.7 * om / 0.2), max_relative = 1e-14);
    for (d, du) in [(0.0, 1.0), (0.3, 0.0), (0.5, 2.0)] {
        for k in [1, 7, 20] {
            let got = certify::optimal_state_bound(StateBoundKind::FomRom, du, d, &[], 0.0, &hc, &h, k);
            assert_relative_eq!(got, (d * d + ga / 2.0 * du * du).sqrt(), max_relative = 1e-14);
        }
    }
}

#[test]
fn init_bound_without_steps_is_the_previous_bound() {
    let (model, h) = small_problem(44);
    let hc = ConstantsBundle::compute(model.ops(), 0.1, 0.0).unwrap().for_horizon(&h);
    let fr = certify::mpc_init_bound(StateBoundKind::FomRom, 5.0, 0.25, &[], 0.0, &hc, &h, 0);
    assert_relative_eq!(fr, 0.25, max_relative = 1e-15);
    let rr = certify::mpc_init_bound(StateBoundKind::RomRom, 5.0, 0.25, &[1.0; 40], 0.125, &hc, &h, 0);
    assert_relative_eq!(rr, 0.375, max_relative = 1e-15);
}

#[test]
fn three_step_recursion_unrolls() {
    let (model, h) = small_problem(45);
    let b = ConstantsBundle::compute(model.ops(), 0.1, 0.0).unwrap();
    let hc = b.for_horizon(&h);
    let ga = b.input_a[0].max(b.input_a[1]);
    let du = [0.3, 0.1, 0.7];
    // sampling window of 4 steps stays inside the first interval
    let mut bound = 0.2;
    for d in du {
        bound = certify::mpc_init_bound(StateBoundKind::FomRom, d, bound, &[], 0.0, &hc, &h, 4);
    }
    let unrolled = 0.04 + ga / 2.0 * du.iter().map(|d| d * d).sum::<f64>();
    assert_relative_eq!(bound, unrolled.sqrt(), max_relative = 1e-14);
    // a window of 12 steps crosses the first switch
    let c = b.c(1, 0);
    let mut bound = 0.2;
    for d in du {
        bound = certify::mpc_init_bound(StateBoundKind::FomRom, d, bound, &[], 0.0, &hc, &h, 12);
    }
    let c4 = (c * ga).max(ga) / 2.0;
    let mut sq = 0.04;
    for d in du {
        sq = c * sq + c4 * d * d;
    }
    assert_relative_eq!(bound, sq.sqrt(), max_relative = 1e-14);
    // residuals enter the reduced-reduced variant with interval weights
    let res: Vec<f64> = (0..40).map(|k| 0.1 * k as f64).collect();
    let got = certify::mpc_init_bound(StateBoundKind::RomRom, 0.5, 0.2, &res, 0.05, &hc, &h, 12);
    let tau = h.tau();
    let mut s = c * 0.25 * 0.25 + 2.0 * c4 * 0.25;
    for (k, r) in res.iter().enumerate().take(12) {
        s += if k < 10 { c } else { 1.0 } * tau * r * r;
    }
    assert_relative_eq!(got, s.sqrt(), max_relative = 1e-14);
}

#[test]
fn full_basis_residuals_vanish() {
    let (model, h) = small_problem(46);
    let mut r = rng(46);
    let cost = random_cost(&mut r, 3, 2, 41, 0.05, 0.5, 0.0, 1e6);
    let basis = pod::orthonormalize(DMatrix::identity(10, 10), model.ops().v_inner());
    let rom = pod::galerkin_project(model.ops_arc().clone(), basis, h.tau()).unwrap();
    let (c0, _) = rom.project_initial(&randv(&mut r, 10));
    let red = ocp::solve_ocp(rom.model(), &h, &cost, &c0, &DMatrix::zeros(3, 41), &OptimizerSettings::default()).unwrap();
    let scale = red.control.norm() + red.adjoint.values.norm();
    for path in [ResidualPath::Direct, ResidualPath::OfflineOnline] {
        let s = certify::state_residuals(&rom, &h, &red.control, &red.state.values, path).unwrap();
        let a = certify::adjoint_residuals(&rom, &h, &cost, &red.output, &red.adjoint, path).unwrap();
        let worst = s.iter().chain(&a.steps).chain(a.jumps.iter().map(|(_, q)| q)).fold(a.terminal, |m, x| m.max(*x));
        assert!(worst < 1e-9 * scale, "{path:?}: {worst}");
    }
}

#[test]
fn offline_residuals_match_direct_ones() {
    let (model, h) = small_problem(47);
    let mut r = rng(47);
    let cost = random_cost(&mut r, 3, 2, 41, 0.05, 0.5, 0.0, 1e6);
    let rom = rom_from_optimum(&model, &h, &cost, &randv(&mut r, 10), 4);
    let u = random_controls(&mut r, 3, 41);
    let z = randn(&mut r, 4, 41);
    let y = randn(&mut r, 2, 41);
    let mut adj = Trajectory::new(*h.grid(), Kind::Adjoint, randn(&mut r, 4, 41)).unwrap();
    adj.left_limits = h.switch_nodes().into_iter().map(|s| (s, randv(&mut r, 4))).collect();
    let sd = certify::state_residuals(&rom, &h, &u, &z, ResidualPath::Direct).unwrap();
    let so = certify::state_residuals(&rom, &h, &u, &z, ResidualPath::OfflineOnline).unwrap();
    for (a, b) in sd.iter().zip(&so) {
        assert_relative_eq!(a, b, max_relative = 1e-8);
    }
    let ad = certify::adjoint_residuals(&rom, &h, &cost, &y, &adj, ResidualPath::Direct).unwrap();
    let ao = certify::adjoint_residuals(&rom, &h, &cost, &y, &adj, ResidualPath::OfflineOnline).unwrap();
    assert_relative_eq!(ad.terminal, ao.terminal, max_relative = 1e-8);
    for (a, b) in ad.steps.iter().zip(&ao.steps) {
        assert_relative_eq!(a, b, max_relative = 1e-8);
    }
    for (a, b) in ad.jumps.iter().zip(&ao.jumps) {
        assert_eq!(a.0, b.0);
        assert_relative_eq!(a.1, b.1, max_relative = 1e-8);
    }
    adj.left_limits.clear();
    assert!(certify::adjoint_residuals(&rom, &h, &cost, &y, &adj, ResidualPath::Direct).is_err());
}

#[test]
fn unconstrained_delta_a_is_the_scaled_gradient() {
    let (model, h) = small_problem(48);
    let mut r = rng(48);
    let cost = random_cost(&mut r, 3, 2, 41, 0.05, 0.5, 0.0, 1e6);
    let x0 = randv(&mut r, 10);
    let rom = rom_from_optimum(&model, &h, &cost, &x0, 3);
    let (c0, _) = rom.project_initial(&x0);
    let red = ocp::solve_ocp(rom.model(), &h, &cost, &c0, &DMatrix::zeros(3, 41), &OptimizerSettings::default()).unwrap();
    let hc = ConstantsBundle::compute(model.ops(), cost.lambda, cost.terminal_weight).unwrap().for_horizon(&h);
    let reduced = ReducedSolution { control: &red.control, state: &red.state.values, output: &red.output, adjoint: &red.adjoint };
    let check = certify::intermediate(&model, &h, &x0, &red.control).unwrap();
    let da = certify::delta_a(&model, &rom, &h, &cost, &reduced, &check, &hc).unwrap();
    let grad = ocp::gradient_smooth(&model, &h, &cost, &x0, &red.control).unwrap();
    let expected = ocp::control_norm(&grad, h.tau()) / cost.lambda;
    assert!(expected > 1e-3);
    assert_relative_eq!(da.at(0.0), expected, max_relative = 1e-8);
    assert_relative_eq!(da.coeff, hc.c1 / (2.0 * cost.lambda), max_relative = 1e-15);
}

#[test]
fn bounds_dominate_the_true_control_error() {
    let (model, h) = small_problem(49);
    let mut r = rng(49);
    let cost = random_cost(&mut r, 3, 2, 41, 0.05, 0.5, 0.01, 2.0);
    let x0 = randv(&mut r, 10);
    let settings = OptimizerSettings::default();
    let opt = ocp::solve_ocp(&model, &h, &cost, &x0, &DMatrix::zeros(3, 41), &settings).unwrap();
    let hc = ConstantsBundle::compute(model.ops(), cost.lambda, cost.terminal_weight).unwrap().for_horizon(&h);
    for rank in [2, 4, 6] {
        let rom = rom_from_optimum(&model, &h, &cost, &x0, rank);
        let (c0, lifted0) = rom.project_initial(&x0);
        let red = ocp::solve_ocp(rom.model(), &h, &cost, &c0, &DMatrix::zeros(3, 41), &settings).unwrap();
        let reduced = ReducedSolution { control: &red.control, state: &red.state.values, output: &red.output, adjoint: &red.adjoint };
        let check = certify::intermediate(&model, &h, &x0, &red.control).unwrap();
        let da = certify::delta_a(&model, &rom, &h, &cost, &reduced, &check, &hc).unwrap().at(0.0);
        let db = certify::delta_b(&model, &rom, &h, &cost, &reduced, &check, &hc).unwrap().at(0.0);
        let defect = norms::mode_norm(model.ops(), &(&x0 - &lifted0), Form::Mass, h.step_mode(0));
        let res = certify::state_residuals(&rom, &h, &red.control, &red.state.values, ResidualPath::OfflineOnline).unwrap();
        let dt = certify::delta_theta(&res, defect, &hc, &h, h.n_steps());
        let ares = certify::adjoint_residuals(&rom, &h, &cost, &red.output, &red.adjoint, ResidualPath::OfflineOnline).unwrap();
        let dtb = certify::tilde_delta_b(dt, certify::delta_p(&ares, &hc, &h), &hc).at(0.0);
        let err = ocp::control_norm(&(&opt.control - &red.control), h.tau());
        assert!(err <= da && err <= db, "rank {rank}: err {err} da {da} db {db}");
        assert!(db <= dtb, "rank {rank}: db {db} tilde {dtb}");
    }
}
