mod common;

use approx::assert_relative_eq;
use nalgebra::DMatrix;
use switchcert::{metrics, sparse};

use common::*;

#[test]
fn identical_runs_have_zero_error() {
    let ops = random_ops(61, 6, 1, 2, 2);
    let mut r = rng(61);
    let cost = random_cost(&mut r, 2, 2, 9, 0.1, 0.5, 0.01, 100.0);
    let (u, x, y) = (random_controls(&mut r, 2, 9), randn(&mut r, 6, 9), randn(&mut r, 2, 9));
    let m = metrics::compute_metrics_raw(&ops, &cost, 0.1, (&u, &x, &y), (&u, &x, &y)).unwrap();
    assert_eq!((m.e_u, m.e_theta, m.e_y, m.e_j), (0.0, 0.0, 0.0, 0.0));
}

#[test]
fn doubled_state_has_unit_error() {
    let ops = random_ops(62, 6, 1, 2, 2);
    let mut r = rng(62);
    let cost = random_cost(&mut r, 2, 2, 9, 0.1, 0.5, 0.0, 100.0);
    let (u, x, y) = (random_controls(&mut r, 2, 9), randn(&mut r, 6, 9), randn(&mut r, 2, 9));
    let m = metrics::compute_metrics_raw(&ops, &cost, 0.1, (&u, &x, &y), (&(&u * 2.0), &(&x * 2.0), &(&y * 2.0))).unwrap();
    assert_relative_eq!(m.e_theta, 1.0, max_relative = 1e-14);
    assert_relative_eq!(m.e_u, 1.0, max_relative = 1e-14);
    assert_relative_eq!(m.e_y, 1.0, max_relative = 1e-14);
}

#[test]
fn metrics_match_direct_sums() {
    let ops = random_ops(63, 6, 1, 2, 3);
    let mut r = rng(63);
    let tau = 0.05;
    let cost = random_cost(&mut r, 2, 3, 12, 0.2, 0.8, 0.03, 100.0);
    let (u1, x1, y1) = (random_controls(&mut r, 2, 12), randn(&mut r, 6, 12), randn(&mut r, 3, 12));
    let (u2, x2, y2) = (random_controls(&mut r, 2, 12), randn(&mut r, 6, 12), randn(&mut r, 3, 12));
    let m = metrics::compute_metrics_raw(&ops, &cost, tau, (&u1, &x1, &y1), (&u2, &x2, &y2)).unwrap();

    let v = sparse::to_dense(ops.v_inner());
    let sum = |f: &dyn Fn(usize) -> f64| (1..12).map(f).sum::<f64>();
    let e_u = (sum(&|k| (u1.column(k) - u2.column(k)).norm_squared()) / sum(&|k| u1.column(k).norm_squared())).sqrt();
    let e_y = (sum(&|k| (y1.column(k) - y2.column(k)).norm_squared()) / sum(&|k| y1.column(k).norm_squared())).sqrt();
    let vq = |a: &DMatrix<f64>, k: usize| (a.column(k).transpose() * &v * a.column(k))[(0, 0)];
    let d = &x1 - &x2;
    let e_theta = (sum(&|k| vq(&d, k)) / sum(&|k| vq(&x1, k))).sqrt();
    // the terminal target is the last output target
    let j = |u: &DMatrix<f64>, y: &DMatrix<f64>| {
        let mut s = 0.0;
        for k in 1..12 {
            s += 0.5 * tau * (y.column(k) - cost.output_target.column(k)).norm_squared();
            s += 0.5 * 0.2 * tau * (u.column(k) - cost.control_target.column(k)).norm_squared();
            s += 0.03 * tau * u.column(k).iter().map(|x| x.abs()).sum::<f64>();
        }
        s + 0.4 * (y.column(11) - cost.output_target.column(11)).norm_squared()
    };
    let e_j = (j(&u1, &y1) - j(&u2, &y2)).abs() / j(&u1, &y1);
    assert_relative_eq!(m.e_u, e_u, max_relative = 1e-12);
    assert_relative_eq!(m.e_y, e_y, max_relative = 1e-12);
    assert_relative_eq!(m.e_theta, e_theta, max_relative = 1e-12);
    assert_relative_eq!(m.e_j, e_j, max_relative = 1e-12);
}

#[test]
fn zero_reference_is_rejected() {
    let ops = random_ops(64, 4, 1, 1, 1);
    let mut r = rng(64);
    let cost = random_cost(&mut r, 1, 1, 5, 0.1, 0.0, 0.0, 100.0);
    let z = (DMatrix::zeros(1, 5), DMatrix::zeros(4, 5), DMatrix::zeros(1, 5));
    let o = (random_controls(&mut r, 1, 5), randn(&mut r, 4, 5), randn(&mut r, 1, 5));
    assert!(metrics::compute_metrics_raw(&ops, &cost, 0.1, (&z.0, &z.1, &z.2), (&o.0, &o.1, &o.2)).is_err());
}
