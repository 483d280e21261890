//! Time-stepping models: the full sparse system and Galerkin-reduced dense systems.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::band::BandLu;
use crate::error::{Error, Result};
use crate::ops::SwitchedOperatorSet;
use crate::sparse;

/// Linear algebra needed by the implicit-Euler state and adjoint solvers.
pub trait Dynamics {
    fn dim(&self) -> usize;
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn n_modes(&self) -> usize;
    fn tau(&self) -> f64;
    fn mass_mul(&self, mode: usize, x: &DVector<f64>) -> DVector<f64>;
    fn input_mul(&self, mode: usize, u: &DVector<f64>) -> DVector<f64>;
    fn input_tr_mul(&self, mode: usize, p: &DVector<f64>) -> DVector<f64>;
    fn output_mul(&self, mode: usize, x: &DVector<f64>) -> DVector<f64>;
    fn output_tr_mul(&self, mode: usize, y: &DVector<f64>) -> DVector<f64>;
    /// `(M_i + τ A_i)⁻¹ rhs`
    fn step_solve(&self, mode: usize, rhs: DVector<f64>) -> DVector<f64>;
    /// `(M_i + τ A_iᵀ)⁻¹ rhs`
    fn step_solve_tr(&self, mode: usize, rhs: DVector<f64>) -> DVector<f64>;
    fn mass_solve(&self, mode: usize, rhs: DVector<f64>) -> DVector<f64>;
    /// State transition applied when the mode changes from `from` to `to`.
    fn transition(&self, _from: usize, _to: usize, x: DVector<f64>) -> DVector<f64> {
        x
    }
}

/// Full-order model with one cached factorization of `M_i + τA_i` per mode.
#[derive(Debug, Clone)]
pub struct FullModel {
    ops: Arc<SwitchedOperatorSet>,
    tau: f64,
    step: Vec<BandLu>,
}

impl FullModel {
    pub fn new(ops: Arc<SwitchedOperatorSet>, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::Invalid(format!("step size {tau}")));
        }
        let step = (0..ops.n_modes())
            .map(|i| {
                let m = ops.mode(i);
                BandLu::from_csr(&sparse::lincomb(1.0, &m.mass, tau, &m.stiffness))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { ops, tau, step })
    }

    pub fn ops(&self) -> &SwitchedOperatorSet {
        &self.ops
    }

    pub fn ops_arc(&self) -> &Arc<SwitchedOperatorSet> {
        &self.ops
    }
}

impl Dynamics for FullModel {
    fn dim(&self) -> usize {
        self.ops.dim()
    }
    fn n_inputs(&self) -> usize {
        self.ops.n_inputs()
    }
    fn n_outputs(&self) -> usize {
        self.ops.n_outputs()
    }
    fn n_modes(&self) -> usize {
        self.ops.n_modes()
    }
    fn tau(&self) -> f64 {
        self.tau
    }
    fn mass_mul(&self, mode: usize, x: &DVector<f64>) -> DVector<f64> {
        sparse::matvec(&self.ops.mode(mode).mass, x)
    }
    fn input_mul(&self, mode: usize, u: &DVector<f64>) -> DVector<f64> {
        sparse::matvec(&self.ops.mode(mode).input, u)
    }
    fn input_tr_mul(&self, mode: usize, p: &DVector<f64>) -> DVector<f64> {
        sparse::matvec_tr(&self.ops.mode(mode).input, p)
    }
    fn output_mul(&self, mode: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.ops.mode(mode).output * x
    }
    fn output_tr_mul(&self, mode: usize, y: &DVector<f64>) -> DVector<f64> {
        self.ops.mode(mode).output.tr_mul(y)
    }
    fn step_solve(&self, mode: usize, mut rhs: DVector<f64>) -> DVector<f64> {
        self.step[mode].solve_in_place(rhs.as_mut_slice());
        rhs
    }
    fn step_solve_tr(&self, mode: usize, mut rhs: DVector<f64>) -> DVector<f64> {
        self.step[mode].solve_transpose_in_place(rhs.as_mut_slice());
        rhs
    }
    fn mass_solve(&self, mode: usize, mut rhs: DVector<f64>) -> DVector<f64> {
        self.ops.mass_lu(mode).solve_in_place(rhs.as_mut_slice());
        rhs
    }
    fn transition(&self, from: usize, to: usize, x: DVector<f64>) -> DVector<f64> {
        match self.ops.transition(from, to) {
            Some(k) => sparse::matvec(k, &x),
            None => x,
        }
    }
}

/// Dense projected operators `VᵀM_iV`, `VᵀA_iV`, `VᵀB_i`, `C_iV`.
#[derive(Debug, Clone)]
pub struct ReducedOperators {
    pub mass: Vec<DMatrix<f64>>,
    pub stiffness: Vec<DMatrix<f64>>,
    pub input: Vec<DMatrix<f64>>,
    pub output: Vec<DMatrix<f64>>,
}

impl ReducedOperators {
    pub fn dim(&self) -> usize {
        self.mass[0].nrows()
    }
}

#[derive(Debug, Clone)]
pub struct ReducedModel {
    ops: Arc<ReducedOperators>,
    tau: f64,
    step: Vec<BandLu>,
    mass: Vec<BandLu>,
}

impl ReducedModel {
    pub fn new(ops: Arc<ReducedOperators>, tau: f64) -> Result<Self> {
        let step = (0..ops.mass.len())
            .map(|i| BandLu::from_dense(&(&ops.mass[i] + &ops.stiffness[i] * tau)))
            .collect::<Result<Vec<_>>>()?;
        let mass = ops.mass.iter().map(BandLu::from_dense).collect::<Result<Vec<_>>>()?;
        Ok(Self { ops, tau, step, mass })
    }

    pub fn ops(&self) -> &ReducedOperators {
        &self.ops
    }
}

impl Dynamics for ReducedModel {
    fn dim(&self) -> usize {
        self.ops.dim()
    }
    fn n_inputs(&self) -> usize {
        self.ops.input[0].ncols()
    }
    fn n_outputs(&self) -> usize {
        self.ops.output[0].nrows()
    }
    fn n_modes(&self) -> usize {
        self.ops.mass.len()
    }
    fn tau(&self) -> f64 {
        self.tau
    }
    fn mass_mul(&self, mode: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.ops.mass[mode] * x
    }
    fn input_mul(&self, mode: usize, u: &DVector<f64>) -> DVector<f64> {
        &self.ops.input[mode] * u
    }
    fn input_tr_mul(&self, mode: usize, p: &DVector<f64>) -> DVector<f64> {
        self.ops.input[mode].tr_mul(p)
    }
    fn output_mul(&self, mode: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.ops.output[mode] * x
    }
    fn output_tr_mul(&self, mode: usize, y: &DVector<f64>) -> DVector<f64> {
        self.ops.output[mode].tr_mul(y)
    }
    fn step_solve(&self, mode: usize, mut rhs: DVector<f64>) -> DVector<f64> {
        self.step[mode].solve_in_place(rhs.as_mut_slice());
        rhs
    }
    fn step_solve_tr(&self, mode: usize, mut rhs: DVector<f64>) -> DVector<f64> {
        self.step[mode].solve_transpose_in_place(rhs.as_mut_slice());
        rhs
    }
    fn mass_solve(&self, mode: usize, mut rhs: DVector<f64>) -> DVector<f64> {
        self.mass[mode].solve_in_place(rhs.as_mut_slice());
        rhs
    }
}
