//! Proper orthogonal decomposition, Galerkin projection and the snapshot window.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use nalgebra_sparse::CsrMatrix;

use crate::certify::OfflineResidualData;
use crate::error::{Error, Result};
use crate::model::{ReducedModel, ReducedOperators};
use crate::ops::SwitchedOperatorSet;
use crate::sparse;
use crate::trajectory::Trajectory;

/// Relative eigenvalue cutoff of the snapshot Gramian.
pub const DROP_TOL: f64 = 1e-14;

/// Snapshot columns with one quadrature weight per column.
#[derive(Debug, Clone)]
pub struct WeightedSnapshots {
    pub values: DMatrix<f64>,
    pub weights: Vec<f64>,
}

impl WeightedSnapshots {
    pub fn new(values: DMatrix<f64>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != values.ncols() {
            return Err(Error::Dimension(format!("{} weights for {} snapshots", weights.len(), values.ncols())));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Invalid("snapshot weights must be nonnegative".into()));
        }
        Ok(Self { values, weights })
    }

    /// Rectangle-rule weight `τ` on every stored node.
    pub fn uniform(values: DMatrix<f64>, tau: f64) -> Self {
        let weights = vec![tau; values.ncols()];
        Self { values, weights }
    }
}

/// FIFO window of snapshot groups (typically one optimal state/adjoint pair each).
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    groups: VecDeque<Vec<WeightedSnapshots>>,
    max_window: usize,
}

impl SnapshotSet {
    pub fn new(max_window: usize) -> Self {
        Self { groups: VecDeque::new(), max_window: max_window.max(1) }
    }

    pub fn push(&mut self, group: Vec<WeightedSnapshots>) {
        self.groups.push_back(group);
        while self.groups.len() > self.max_window {
            self.groups.pop_front();
        }
    }

    /// Optimal state and adjoint as piecewise-constant functions in time: the
    /// state takes `θ_1..θ_K` on the steps, the adjoint `p_0..p_{K-1}` plus its
    /// left limits at switching nodes, so the initial and terminal values are
    /// not snapshots.
    pub fn push_pair(&mut self, state: &DMatrix<f64>, adjoint: &Trajectory, tau: f64) {
        let k = state.ncols();
        let mut group = vec![
            WeightedSnapshots::uniform(state.columns(1, k - 1).into_owned(), tau),
            WeightedSnapshots::uniform(adjoint.values.columns(0, k - 1).into_owned(), tau),
        ];
        if !adjoint.left_limits.is_empty() {
            let cols: Vec<DVector<f64>> = adjoint.left_limits.iter().map(|(_, v)| v.clone()).collect();
            group.push(WeightedSnapshots::uniform(DMatrix::from_columns(&cols), tau));
        }
        self.push(group);
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn max_window(&self) -> usize {
        self.max_window
    }

    pub fn groups(&self) -> impl Iterator<Item = &Vec<WeightedSnapshots>> {
        self.groups.iter()
    }

    /// All snapshot columns scaled by the square roots of their weights.
    pub fn weighted_matrix(&self) -> Result<DMatrix<f64>> {
        let blocks: Vec<&WeightedSnapshots> = self.groups.iter().flatten().collect();
        let n = blocks.first().map(|b| b.values.nrows()).ok_or_else(|| Error::Invalid("empty snapshot set".into()))?;
        if blocks.iter().any(|b| b.values.nrows() != n) {
            return Err(Error::Dimension("snapshots of different dimensions".into()));
        }
        let m: usize = blocks.iter().map(|b| b.values.ncols()).sum();
        let mut y = DMatrix::zeros(n, m);
        let mut c = 0;
        for b in blocks {
            for (j, w) in b.weights.iter().enumerate() {
                y.set_column(c, &(b.values.column(j) * w.sqrt()));
                c += 1;
            }
        }
        Ok(y)
    }
}

#[derive(Debug, Clone)]
pub struct PodBasis {
    /// `N × r_max`, orthonormal in the `v_inner` product.
    pub vectors: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// `Σ_j w_j ‖s_j‖²`, summed from the snapshots directly.
    pub total_energy: f64,
}

impl PodBasis {
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn energy_fraction(&self, r: usize) -> Result<f64> {
        if r == 0 || r > self.rank() {
            return Err(Error::Domain(format!("rank {r} outside 1..={}", self.rank())));
        }
        Ok(self.eigenvalues[..r].iter().sum::<f64>() / self.total_energy)
    }

    /// Smallest `r` with `E(r) ≥ threshold`; the flag is false when even the
    /// full rank falls short.
    pub fn select_rank(&self, threshold: f64) -> (usize, bool) {
        let mut acc = 0.0;
        for (i, l) in self.eigenvalues.iter().enumerate() {
            acc += l;
            if acc >= threshold * self.total_energy {
                return (i + 1, true);
            }
        }
        (self.rank(), false)
    }

    pub fn truncated(&self, r: usize) -> DMatrix<f64> {
        self.vectors.columns(0, r.min(self.rank())).into_owned()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("pod_eigenvalues.csv"))?;
        w.write_record(["index", "eigenvalue"])?;
        for (i, l) in self.eigenvalues.iter().enumerate() {
            w.write_record([i.to_string(), format!("{l:e}")])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("pod_basis.csv"))?;
        for i in 0..self.vectors.nrows() {
            w.write_record(self.vectors.row(i).iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Method of snapshots on the weighted Gramian `Yᵀ W Y`.
pub fn compute_pod(snaps: &SnapshotSet, v_inner: &CsrMatrix<f64>) -> Result<PodBasis> {
    let y = snaps.weighted_matrix()?;
    if y.nrows() != v_inner.nrows() {
        return Err(Error::Dimension("snapshot dimension differs from the inner product".into()));
    }
    let wy = sparse::mul_dense(v_inner, &y);
    let gram = y.transpose() * &wy;
    let gram = (&gram + gram.transpose()) * 0.5;
    let total_energy = gram.trace();
    if !(total_energy > 0.0) {
        return Err(Error::Invalid("snapshot set carries no energy".into()));
    }
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    let kept: Vec<usize> = order.into_iter().filter(|&i| eig.eigenvalues[i] >= DROP_TOL * top && eig.eigenvalues[i] > 0.0).collect();
    if kept.is_empty() {
        return Err(Error::Invalid("POD rank is zero".into()));
    }
    let coeffs = DMatrix::from_fn(y.ncols(), kept.len(), |j, c| eig.eigenvectors[(j, kept[c])] / eig.eigenvalues[kept[c]].sqrt());
    let vectors = orthonormalize(&y * coeffs, v_inner);
    let eigenvalues = kept.iter().map(|&i| eig.eigenvalues[i]).collect();
    Ok(PodBasis { vectors, eigenvalues, total_energy })
}

/// `w`-orthonormal columns spanning those of `v`: two Cholesky–QR passes when
/// the columns are well conditioned, modified Gram–Schmidt otherwise.
pub fn orthonormalize(v: DMatrix<f64>, w: &CsrMatrix<f64>) -> DMatrix<f64> {
    let pass = |v: &DMatrix<f64>| -> Option<DMatrix<f64>> {
        let g = v.transpose() * sparse::mul_dense(w, v);
        let r = ((&g + g.transpose()) * 0.5).cholesky()?.l().transpose();
        let d = r.diagonal();
        let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(*x), hi.max(*x)));
        if !(lo > 1e-4 * hi) {
            return None;
        }
        Some(r.solve_upper_triangular(&v.transpose())?.transpose())
    };
    match pass(&v).and_then(|q| pass(&q)) {
        Some(q) => q,
        None => reorthonormalize(v, w),
    }
}

/// One modified Gram–Schmidt pass in the `w` inner product.
pub fn reorthonormalize(mut v: DMatrix<f64>, w: &CsrMatrix<f64>) -> DMatrix<f64> {
    for j in 0..v.ncols() {
        let mut col = v.column(j).into_owned();
        for i in 0..j {
            let q = v.column(i).into_owned();
            let c = sparse::bilinear(w, &q, &col);
            col.axpy(-c, &q, 1.0);
        }
        let n = sparse::quad_form(w, &col).max(0.0).sqrt();
        if n > 0.0 {
            col /= n;
        }
        v.set_column(j, &col);
    }
    v
}

/// Galerkin reduced model with offline residual data.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    basis: DMatrix<f64>,
    full: Arc<SwitchedOperatorSet>,
    reduced: Arc<ReducedOperators>,
    model: ReducedModel,
    inner_chol: Cholesky<f64, Dyn>,
    w_basis: DMatrix<f64>,
    offline: OfflineResidualData,
}

impl ReducedSystem {
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn full(&self) -> &SwitchedOperatorSet {
        &self.full
    }

    pub fn operators(&self) -> &ReducedOperators {
        &self.reduced
    }

    pub fn model(&self) -> &ReducedModel {
        &self.model
    }

    pub fn offline(&self) -> &OfflineResidualData {
        &self.offline
    }

    pub fn lift(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.basis * c
    }

    pub fn lift_all(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        &self.basis * c
    }

    /// Coefficients of the `v_inner`-orthogonal projection.
    pub fn project(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.inner_chol.solve(&self.w_basis.tr_mul(theta))
    }

    /// Projection coefficients and the lifted projection.
    pub fn project_initial(&self, theta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let c = self.project(theta);
        let lifted = self.lift(&c);
        (c, lifted)
    }
}

/// Project every mode onto `span(basis)` and assemble the offline residual data.
pub fn galerkin_project(ops: Arc<SwitchedOperatorSet>, basis: DMatrix<f64>, tau: f64) -> Result<ReducedSystem> {
    if basis.nrows() != ops.dim() || basis.ncols() == 0 {
        return Err(Error::Dimension(format!("basis is {}x{} for N = {}", basis.nrows(), basis.ncols(), ops.dim())));
    }
    let mut reduced = ReducedOperators { mass: Vec::new(), stiffness: Vec::new(), input: Vec::new(), output: Vec::new() };
    for i in 0..ops.n_modes() {
        let m = ops.mode(i);
        let mass = basis.transpose() * sparse::mul_dense(&m.mass, &basis);
        let mass = (&mass + mass.transpose()) * 0.5;
        if mass.clone().cholesky().is_none() {
            return Err(Error::Singular(format!("projected mass of mode {i} is not positive definite")));
        }
        reduced.mass.push(mass);
        reduced.stiffness.push(basis.transpose() * sparse::mul_dense(&m.stiffness, &basis));
        reduced.input.push(basis.tr_mul(&sparse::to_dense(&m.input)));
        reduced.output.push(&m.output * &basis);
    }
    let w_basis = sparse::mul_dense(ops.v_inner(), &basis);
    let gram = basis.transpose() * &w_basis;
    let inner_chol = ((&gram + gram.transpose()) * 0.5)
        .cholesky()
        .ok_or_else(|| Error::Singular("basis is rank deficient in the inner product".into()))?;
    let reduced = Arc::new(reduced);
    let model = ReducedModel::new(reduced.clone(), tau)?;
    let offline = OfflineResidualData::assemble(&ops, &basis)?;
    Ok(ReducedSystem { basis, full: ops, reduced, model, inner_chol, w_basis, offline })
}
