mod common;

use std::sync::Arc;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use switchcert::norms::{self, Form};
use switchcert::sparse;
use switchcert::{Kind, ModeOperators, Side, SwitchedOperatorSet, SwitchingSignal, TimeGrid, Trajectory};

use common::*;

fn identity_ops(n: usize) -> SwitchedOperatorSet {
    let id = sparse::identity(n);
    let mode = ModeOperators { mass: id.clone(), stiffness: id.clone(), input: sparse::from_dense(&DMatrix::zeros(n, 1)), output: DMatrix::zeros(1, n) };
    SwitchedOperatorSet::new(vec![mode], id).unwrap()
}

#[test]
fn energy_norm_examples() {
    let id = sparse::identity(2);
    assert_eq!(norms::energy_norm(&DVector::zeros(2), &id).unwrap(), 0.0);
    assert_relative_eq!(norms::energy_norm(&DVector::from_vec(vec![3.0, 4.0]), &id).unwrap(), 5.0, epsilon = 1e-15);
    assert!(norms::energy_norm(&DVector::zeros(3), &id).is_err());
}

#[test]
fn energy_norm_matches_dense_quadratic_form() {
    let ops = random_ops(3, 25, 2, 2, 2);
    let mut r = rng(11);
    let v = randv(&mut r, 25);
    let dense = sparse::to_dense(&ops.mode(1).stiffness);
    let oracle = (v.transpose() * (&dense + dense.transpose()) * &v)[(0, 0)] / 2.0;
    let got = norms::energy_norm(&v, &ops.mode(1).stiffness).unwrap();
    assert_relative_eq!(got * got, oracle, max_relative = 1e-12);
}

#[test]
fn dual_norm_examples_and_dense_oracle() {
    let ops = identity_ops(4);
    assert_eq!(norms::dual_norm_a(&DVector::zeros(4), 0, &ops).unwrap(), 0.0);
    let r = DVector::from_vec(vec![1.0, 2.0, 2.0, 0.0]);
    assert_relative_eq!(norms::dual_norm_a(&r, 0, &ops).unwrap(), 3.0, epsilon = 1e-14);

    let ops = random_ops(5, 20, 2, 2, 2);
    let mut g = rng(5);
    let r = randv(&mut g, 20);
    let dense = sparse::to_dense(&ops.mode(0).stiffness);
    let s = (&dense + dense.transpose()) / 2.0;
    let z = s.clone().lu().solve(&r).unwrap();
    assert_relative_eq!(norms::dual_norm_a(&r, 0, &ops).unwrap(), r.dot(&z).sqrt(), max_relative = 1e-10);
}

#[test]
fn riesz_identity() {
    let ops = random_ops(9, 30, 2, 2, 2);
    let mut g = rng(9);
    for mode in 0..2 {
        let v = randv(&mut g, 30);
        let sv = sparse::matvec(ops.sym_stiffness(mode), &v);
        let lhs = norms::dual_norm_a(&sv, mode, &ops).unwrap();
        let rhs = norms::mode_norm(&ops, &v, Form::Stiffness, mode);
        assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
    }
}

#[test]
fn spacetime_norm_of_constant_trajectory() {
    // ‖v‖ = 2 in the form, unit interval, one weight
    let ops = identity_ops(1);
    let grid = TimeGrid::new(0.0, 0.1, 11).unwrap();
    let h = switchcert::Horizon::from_modes(grid, vec![0; 10]).unwrap();
    let traj = Trajectory::new(grid, Kind::State, DMatrix::from_element(1, 11, 2.0)).unwrap();
    let n = norms::weighted_spacetime_norm(&ops, &traj, &h, Form::Stiffness, &[1.0], 10).unwrap();
    assert_relative_eq!(n, 2.0, epsilon = 1e-14);
}

#[test]
fn spacetime_norm_unit_weights_is_plain_l2() {
    let ops = random_ops(2, 8, 1, 1, 1);
    let grid = TimeGrid::new(0.0, 0.05, 21).unwrap();
    let h = switchcert::Horizon::from_modes(grid, vec![0; 20]).unwrap();
    let mut g = rng(2);
    let values = randn(&mut g, 8, 21);
    let traj = Trajectory::new(grid, Kind::State, values.clone()).unwrap();
    let got = norms::weighted_spacetime_norm(&ops, &traj, &h, Form::Mass, &[1.0], 20).unwrap();
    let m = sparse::to_dense(&ops.mode(0).mass);
    let oracle: f64 = (1..21).map(|k| 0.05 * (values.column(k).transpose() * &m * values.column(k))[(0, 0)]).sum();
    assert_relative_eq!(got, oracle.sqrt(), max_relative = 1e-12);
}

#[test]
fn spacetime_norm_two_intervals_hand_sum() {
    let ops = random_ops(4, 6, 2, 1, 1);
    let h = alternating_horizon(11, 0.1, 5);
    let mut g = rng(4);
    let a = randv(&mut g, 6);
    let b = randv(&mut g, 6);
    // piecewise constant: a on nodes 0..=5, b afterwards
    let values = DMatrix::from_fn(6, 11, |i, k| if k <= 5 { a[i] } else { b[i] });
    let traj = Trajectory::new(*h.grid(), Kind::State, values).unwrap();
    let got = norms::weighted_spacetime_norm(&ops, &traj, &h, Form::Stiffness, &[4.0, 1.0], 10).unwrap();
    let qa = sparse::quad_form(&ops.mode(0).stiffness, &a);
    let qb = sparse::quad_form(&ops.mode(1).stiffness, &b);
    // steps 0..4 see nodes 1..5 (= a) in mode 0, steps 5..9 see nodes 6..10 (= b) in mode 1
    let oracle = 4.0 * 5.0 * 0.1 * qa + 5.0 * 0.1 * qb;
    assert_relative_eq!(got, oracle.sqrt(), max_relative = 1e-12);
    assert!(norms::weighted_spacetime_norm(&ops, &traj, &h, Form::Stiffness, &[4.0], 10).is_err());
    assert!(norms::weighted_spacetime_norm(&ops, &traj, &h, Form::Stiffness, &[4.0, 1.0], 11).is_err());
}

#[test]
fn rejects_indefinite_mass() {
    let n = 3;
    let mode = ModeOperators {
        mass: sparse::from_dense(&(-DMatrix::<f64>::identity(n, n))),
        stiffness: sparse::identity(n),
        input: sparse::from_dense(&DMatrix::zeros(n, 1)),
        output: DMatrix::zeros(1, n),
    };
    assert!(SwitchedOperatorSet::new(vec![mode], sparse::identity(n)).is_err());
}

#[test]
fn rejects_dimension_mismatch() {
    let mode = ModeOperators {
        mass: sparse::identity(3),
        stiffness: sparse::identity(4),
        input: sparse::from_dense(&DMatrix::zeros(3, 1)),
        output: DMatrix::zeros(1, 3),
    };
    assert!(SwitchedOperatorSet::new(vec![mode], sparse::identity(3)).is_err());
}

#[test]
fn coercivity_is_recorded() {
    let ops = random_ops(1, 12, 2, 2, 2);
    assert!(ops.coercivity_estimate() > 0.0);
}

#[test]
fn matrix_market_roundtrip() {
    let ops = random_ops(13, 9, 2, 2, 3);
    let signal = SwitchingSignal::periodic(0.0, 2.0, 0.5, &[0, 1]).unwrap();
    let dir = std::env::temp_dir().join(format!("switchcert-mm-{}", std::process::id()));
    ops.save_dir(&dir, Some(&signal)).unwrap();
    let (back, sig) = SwitchedOperatorSet::load_dir(&dir).unwrap();
    std::fs::remove_dir_all(&dir).ok();
    assert_eq!(sig.unwrap(), signal);
    for i in 0..2 {
        let a = ops.mode(i);
        let b = back.mode(i);
        assert_relative_eq!(sparse::to_dense(&a.mass), sparse::to_dense(&b.mass), max_relative = 1e-15);
        assert_relative_eq!(sparse::to_dense(&a.stiffness), sparse::to_dense(&b.stiffness), max_relative = 1e-15);
        assert_relative_eq!(sparse::to_dense(&a.input), sparse::to_dense(&b.input), max_relative = 1e-15);
        assert_relative_eq!(a.output, b.output, max_relative = 1e-15);
    }
    let _ = Arc::new(back);
}

proptest! {
    #[test]
    fn one_sided_modes_agree_off_breakpoints(
        gaps in proptest::collection::vec(0.05f64..1.0, 0..6),
        t_frac in 0.0f64..1.0,
    ) {
        let mut bps = Vec::new();
        let mut t = 0.0;
        for g in &gaps {
            t += g;
            bps.push(t);
        }
        let end = t + 0.5;
        let modes: Vec<usize> = (0..=bps.len()).map(|k| k % 3).collect();
        let s = SwitchingSignal::new(0.0, end, bps.clone(), modes).unwrap();
        let q = t_frac * end;
        prop_assume!(bps.iter().all(|b| (b - q).abs() > 1e-6));
        prop_assert_eq!(s.mode_at(q, Side::Left).unwrap(), s.mode_at(q, Side::Right).unwrap());
    }
}
