mod common;

use std::sync::Arc;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use switchcert::fem::{self, BenchmarkConfig, Rect, Region};
use switchcert::{sparse, FullModel, Horizon, ModeOperators, SwitchedOperatorSet, SwitchingSignal, TimeGrid};

fn ones(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0)
}

fn unit_square() -> BenchmarkConfig {
    BenchmarkConfig {
        h: 0.1,
        domain: Rect::new(0.0, 1.0, 0.0, 1.0),
        room1: Rect::new(0.0, 0.4, 0.0, 1.0),
        door: Rect::new(0.4, 0.6, 0.4, 0.6),
        room3: Rect::new(0.6, 1.0, 0.0, 1.0),
        zeta: [1.0, 1.0, 1.0],
        kappa: [1.0, 1.0, 1.0],
        robin: 0.0,
        convection: [0.0, 0.0],
        reaction: 1.0,
        n_controls: 2,
    }
}

#[test]
fn benchmark_shapes_and_definiteness() {
    let a = fem::assemble(&BenchmarkConfig::default()).unwrap();
    let ops = &a.ops;
    assert_eq!(ops.n_modes(), 2);
    assert_eq!(ops.n_inputs(), 10);
    assert_eq!(ops.n_outputs(), 2);
    assert!((1000..=3000).contains(&ops.dim()), "N = {}", ops.dim());
    for i in 0..2 {
        assert!(ops.mass_lu(i).min_pivot() > 0.0);
    }
    assert!(ops.coercivity_estimate() > 0.0);
}

#[test]
fn mass_integrates_capacity() {
    let cfg = BenchmarkConfig::default();
    let a = fem::assemble(&cfg).unwrap();
    let n = a.ops.dim();
    let wall = cfg.domain.area() - cfg.room1.area() - cfg.room3.area() - cfg.door.area();
    for mode in 0..2 {
        let (zd, _) = cfg.coefficients(Region::Door, mode);
        let oracle = cfg.zeta[1] * (cfg.room1.area() + cfg.room3.area()) + cfg.zeta[2] * wall + zd * cfg.door.area();
        let total = sparse::quad_form(&a.ops.mode(mode).mass, &ones(n));
        assert_relative_eq!(total, oracle, max_relative = 1e-12);
    }
}

#[test]
fn output_of_constant_is_one() {
    let a = fem::assemble(&BenchmarkConfig::default()).unwrap();
    let y = &a.ops.mode(0).output * ones(a.ops.dim());
    assert_relative_eq!(y[0], 1.0, epsilon = 1e-12);
    assert_relative_eq!(y[1], 1.0, epsilon = 1e-12);
}

#[test]
fn control_columns_integrate_to_segment_length() {
    let cfg = BenchmarkConfig::default();
    let a = fem::assemble(&cfg).unwrap();
    let b = sparse::to_dense(&a.ops.mode(0).input);
    let seg = (cfg.domain.y1 - cfg.domain.y0) / cfg.n_controls as f64;
    for k in 0..cfg.n_controls {
        assert_relative_eq!(b.column(k).sum(), seg, max_relative = 1e-10);
    }
    // input is mode independent
    assert_eq!(b, sparse::to_dense(&a.ops.mode(1).input));
}

#[test]
fn modes_differ_only_on_door_nodes() {
    let cfg = BenchmarkConfig::default();
    let a = fem::assemble(&cfg).unwrap();
    let d = sparse::to_dense(&a.ops.mode(0).mass) - sparse::to_dense(&a.ops.mode(1).mass);
    let k = sparse::to_dense(&a.ops.mode(0).stiffness) - sparse::to_dense(&a.ops.mode(1).stiffness);
    let door = cfg.door;
    let on_door = |v: usize| {
        let (x, y) = a.mesh.coords(v);
        x >= door.x0 - 1e-12 && x <= door.x1 + 1e-12 && y >= door.y0 - 1e-12 && y <= door.y1 + 1e-12
    };
    let mut touched = 0;
    for i in 0..d.nrows() {
        for j in 0..d.ncols() {
            if d[(i, j)] != 0.0 || k[(i, j)] != 0.0 {
                assert!(on_door(i) && on_door(j), "entry ({i}, {j}) differs off the door");
                touched += 1;
            }
        }
    }
    assert!(touched > 0);
}

#[test]
fn diffusion_part_annihilates_constants() {
    let a = fem::assemble(&unit_square()).unwrap();
    let n = a.ops.dim();
    for mode in 0..2 {
        let m = &a.ops.mode(mode);
        let r = sparse::matvec(&m.stiffness, &ones(n)) - sparse::matvec(&m.mass, &ones(n));
        assert!(r.amax() < 1e-12, "row sums off by {}", r.amax());
    }
    assert_relative_eq!(sparse::quad_form(&a.ops.mode(0).mass, &ones(n)), 1.0, max_relative = 1e-12);
}

#[test]
fn stiffness_energy_of_linear_function() {
    // ∫|∇x|² = 1 on the unit square, plus the reaction ∫x² = 1/3
    let a = fem::assemble(&unit_square()).unwrap();
    let x = DVector::from_fn(a.ops.dim(), |v, _| a.mesh.coords(v).0);
    let e = sparse::quad_form(&a.ops.mode(0).stiffness, &x);
    let m = sparse::quad_form(&a.ops.mode(0).mass, &x);
    assert_relative_eq!(e - m, 1.0, max_relative = 1e-12);
    assert_relative_eq!(m, 1.0 / 3.0, max_relative = 1e-12);
}

#[test]
fn rejects_invalid_geometry() {
    let mut cfg = BenchmarkConfig::default();
    cfg.door = Rect::new(4.0, 5.3, 2.3, 2.7);
    assert!(fem::assemble(&cfg).is_err());
    let mut cfg = BenchmarkConfig::default();
    cfg.kappa[0] = 0.0;
    assert!(fem::assemble(&cfg).is_err());
    let mut cfg = BenchmarkConfig::default();
    cfg.door = Rect::new(5.0, 5.3, 2.3, 2.3);
    assert!(fem::assemble(&cfg).is_err());
}

fn scalar_ops(m: f64, a: f64, b: f64) -> Arc<SwitchedOperatorSet> {
    let mode = ModeOperators {
        mass: sparse::from_dense(&DMatrix::from_element(1, 1, m)),
        stiffness: sparse::from_dense(&DMatrix::from_element(1, 1, a)),
        input: sparse::from_dense(&DMatrix::from_element(1, 1, b)),
        output: DMatrix::from_element(1, 1, 1.0),
    };
    Arc::new(SwitchedOperatorSet::new(vec![mode], sparse::identity(1)).unwrap())
}

#[test]
fn scalar_targets_converge_to_exponential() {
    // 2ẏ + 3y = 1, y(0) = 1: y = 1/3 + 2/3 exp(-1.5 t)
    let ops = scalar_ops(2.0, 3.0, 1.0);
    let err = |tau: f64| {
        let n = (1.0 / tau).round() as usize + 1;
        let h = Horizon::from_modes(TimeGrid::new(0.0, tau, n).unwrap(), vec![0; n - 1]).unwrap();
        let model = FullModel::new(ops.clone(), tau).unwrap();
        let y = fem::compute_targets(&model, &h).unwrap();
        (0..n).map(|k| (y[(0, k)] - (1.0 / 3.0 + 2.0 / 3.0 * (-1.5 * k as f64 * tau).exp())).abs()).fold(0.0, f64::max)
    };
    let (e1, e2) = (err(0.02), err(0.01));
    assert!(e1 < 0.02);
    assert!(e2 < 0.6 * e1 && e2 > 0.4 * e1, "first order: {e1} -> {e2}");
}

#[test]
fn targets_without_input_follow_free_decay() {
    // B = 0: implicit Euler gives y_k = (m / (m + τa))^k exactly
    let ops = scalar_ops(1.0, 0.5, 0.0);
    let h = Horizon::from_modes(TimeGrid::new(0.0, 0.1, 11).unwrap(), vec![0; 10]).unwrap();
    let model = FullModel::new(ops, 0.1).unwrap();
    let y = fem::compute_targets(&model, &h).unwrap();
    for k in 0..11 {
        assert_relative_eq!(y[(0, k)], (1.0f64 / 1.05).powi(k as i32), max_relative = 1e-13);
    }
}

#[test]
fn zero_stiffness_is_not_coercive() {
    let mode = ModeOperators {
        mass: sparse::identity(1),
        stiffness: sparse::from_dense(&DMatrix::zeros(1, 1)),
        input: sparse::from_dense(&DMatrix::zeros(1, 1)),
        output: DMatrix::from_element(1, 1, 1.0),
    };
    assert!(SwitchedOperatorSet::new(vec![mode], sparse::identity(1)).is_err());
}

#[test]
fn benchmark_targets_are_time_resolved() {
    let cfg = BenchmarkConfig::default();
    let a = fem::assemble(&cfg).unwrap();
    let signal = SwitchingSignal::periodic(0.0, 1.0, 0.5, &[0, 1]).unwrap();
    let run = |tau: f64| {
        let n = (1.0 / tau).round() as usize + 1;
        let h = Horizon::new(&signal, TimeGrid::new(0.0, tau, n).unwrap()).unwrap();
        let model = FullModel::new(a.ops.clone(), tau).unwrap();
        fem::compute_targets(&model, &h).unwrap()
    };
    let coarse = run(0.02);
    let fine = run(0.01);
    for k in 0..coarse.ncols() {
        let c = coarse.column(k);
        let f = fine.column(2 * k);
        assert!((c - f).norm() <= 1e-2 * f.norm(), "node {k}");
    }
    assert!((coarse[(0, 1)] - 1.0).abs() < 0.1 && (coarse[(1, 1)] - 1.0).abs() < 0.1);
}
