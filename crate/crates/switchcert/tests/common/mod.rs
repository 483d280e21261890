#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use switchcert::ocp::CostConfig;
use switchcert::sparse;
use switchcert::{FullModel, Horizon, ModeOperators, SwitchedOperatorSet, TimeGrid};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn randv(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Dense SPD matrix `GᵀG/n + shift·I`.
pub fn spd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let g = randn(rng, n, n);
    g.transpose() * &g / n as f64 + DMatrix::identity(n, n) * shift
}

/// Random switched system with SPD masses and coercive, nonsymmetric stiffness.
pub fn random_ops(seed: u64, n: usize, modes: usize, rho: usize, p: usize) -> Arc<SwitchedOperatorSet> {
    let mut r = rng(seed);
    let input = randn(&mut r, n, rho);
    let mut list = Vec::new();
    for _ in 0..modes {
        let mass = spd(&mut r, n, 0.5);
        let skew = randn(&mut r, n, n) * 0.3;
        let stiff = spd(&mut r, n, 1.0) + &skew - skew.transpose();
        let output = randn(&mut r, p, n);
        list.push(ModeOperators {
            mass: sparse::from_dense(&mass),
            stiffness: sparse::from_dense(&stiff),
            input: sparse::from_dense(&input),
            output,
        });
    }
    let v = sparse::sym_part(&list[0].stiffness);
    Arc::new(SwitchedOperatorSet::new(list, v).unwrap())
}

/// `K` nodes with the mode flipping between 0 and 1 every `period` steps.
pub fn alternating_horizon(n_nodes: usize, tau: f64, period: usize) -> Horizon {
    let grid = TimeGrid::new(0.0, tau, n_nodes).unwrap();
    let modes = (0..n_nodes - 1).map(|k| (k / period) % 2).collect();
    Horizon::from_modes(grid, modes).unwrap()
}

/// 10 dofs, 2 modes, 3 switches on a 41-node grid.
pub fn small_problem(seed: u64) -> (FullModel, Horizon) {
    let ops = random_ops(seed, 10, 2, 3, 2);
    let horizon = alternating_horizon(41, 0.05, 10);
    (FullModel::new(ops, 0.05).unwrap(), horizon)
}

#[allow(clippy::too_many_arguments)]
pub fn random_cost(rng: &mut ChaCha8Rng, rho: usize, p: usize, k: usize, lambda: f64, mu: f64, l1: f64, bound: f64) -> CostConfig {
    CostConfig {
        output_target: randn(rng, p, k),
        control_target: randn(rng, rho, k) * 0.5,
        terminal_target: randv(rng, p),
        lambda,
        terminal_weight: mu,
        l1_weight: l1,
        lower: DVector::from_element(rho, -bound),
        upper: DVector::from_element(rho, bound),
    }
}

pub fn random_controls(rng: &mut ChaCha8Rng, rho: usize, k: usize) -> DMatrix<f64> {
    let mut u = randn(rng, rho, k);
    u.set_column(0, &DVector::zeros(rho));
    u
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// `‖a − b‖ / ‖b‖` in the Frobenius norm.
pub fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Minimizer of `½(x − v)² + s|x|` over `[lo, hi]` by a two-level grid
/// search ending at resolution `1e-6`; exact up to that resolution because the
/// objective is convex.
pub fn prox_grid_oracle(v: f64, s: f64, lo: f64, hi: f64) -> f64 {
    let f = |x: f64| 0.5 * (x - v) * (x - v) + s * x.abs();
    let scan = |a: f64, b: f64, h: f64| {
        let n = ((b - a) / h).ceil() as usize;
        let mut best = (f(a), a);
        for i in 0..=n {
            let x = (a + h * i as f64).min(b);
            let fx = f(x);
            if fx < best.0 {
                best = (fx, x);
            }
        }
        best.1
    };
    let coarse = 1e-2;
    let c = scan(lo, hi, coarse);
    scan((c - coarse).max(lo), (c + coarse).min(hi), 1e-6)
}

/// Dense quadratic cost data for the smooth objective in the raw control
/// entries `u[:, 1..]`: `J(u) = ½ xᵀ H x − gᵀ x + const`.
pub fn dense_lq(model: &FullModel, horizon: &Horizon, cost: &CostConfig, initial: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    use switchcert::{forward, Dynamics};
    let (rho, k) = (model.n_inputs(), horizon.n_nodes());
    let tau = horizon.tau();
    let n = rho * (k - 1);
    let out = |x0: &DVector<f64>, u: &DMatrix<f64>| {
        let s = forward::solve_state_values(model, horizon, x0, u).unwrap();
        forward::apply_output(model, horizon, &s).unwrap()
    };
    let free = out(initial, &DMatrix::zeros(rho, k));
    let zero = DVector::zeros(model.dim());
    let mut columns = Vec::with_capacity(n);
    for c in 0..n {
        let mut u = DMatrix::zeros(rho, k);
        u[(c % rho, 1 + c / rho)] = 1.0;
        columns.push(out(&zero, &u));
    }
    let last = k - 1;
    let mut h = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    for a in 0..n {
        for b in 0..=a {
            let mut s = 0.0;
            for t in 1..k {
                s += tau * columns[a].column(t).dot(&columns[b].column(t));
            }
            s += cost.terminal_weight * columns[a].column(last).dot(&columns[b].column(last));
            h[(a, b)] = s;
            h[(b, a)] = s;
        }
        h[(a, a)] += cost.lambda * tau;
        let mut s = 0.0;
        for t in 1..k {
            s += tau * columns[a].column(t).dot(&(cost.output_target.column(t) - free.column(t)));
        }
        s += cost.terminal_weight * columns[a].column(last).dot(&(&cost.terminal_target - free.column(last)));
        s += cost.lambda * tau * cost.control_target[(a % rho, 1 + a / rho)];
        g[a] = s;
    }
    (h, g)
}

/// Raw control entries `u[:, 1..]` stacked node by node.
pub fn flatten(u: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(u.nrows() * (u.ncols() - 1), u.columns(1, u.ncols() - 1).iter().cloned())
}
