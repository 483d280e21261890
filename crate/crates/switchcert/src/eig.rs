//! Largest eigenvalues of symmetric matrices and symmetric-definite pencils.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use nalgebra_sparse::CsrMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::band::BandLu;
use crate::error::{Error, Result};
use crate::sparse;

/// Pencils up to this size go through a dense Cholesky reduction.
pub const DENSE_LIMIT: usize = 300;

pub fn max_sym_eig(a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::Dimension("eigenvalue of a non-square or empty matrix".into()));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let m = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    Ok(m)
}

/// Largest `λ` with `A x = λ B x` for symmetric `A` and SPD `B`.
pub fn pencil_max_eig(a: &CsrMatrix<f64>, b: &CsrMatrix<f64>, b_lu: &BandLu) -> Result<f64> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n || b_lu.dim() != n {
        return Err(Error::Dimension("pencil dimensions".into()));
    }
    if n <= DENSE_LIMIT {
        return dense_pencil_max(&sparse::to_dense(a), &sparse::to_dense(b));
    }
    lanczos_pencil_max(n, |v| sparse::matvec(a, v), |v| sparse::matvec(b, v), |v| b_lu.solve(v), 0x5eed)
}

fn dense_pencil_max(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let chol = b.clone().cholesky().ok_or_else(|| Error::Eigen("pencil matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv_a = l.solve_lower_triangular(a).ok_or_else(|| Error::Eigen("triangular solve".into()))?;
    let c = l
        .solve_lower_triangular(&linv_a.transpose())
        .ok_or_else(|| Error::Eigen("triangular solve".into()))?;
    max_sym_eig(&c)
}

/// Lanczos on `B⁻¹A` in the `B` inner product with full reorthogonalization.
pub fn lanczos_pencil_max(
    n: usize,
    apply_a: impl Fn(&DVector<f64>) -> DVector<f64>,
    apply_b: impl Fn(&DVector<f64>) -> DVector<f64>,
    solve_b: impl Fn(&DVector<f64>) -> DVector<f64>,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let mut bv = apply_b(&v);
    let nrm = v.dot(&bv).sqrt();
    v /= nrm;
    bv /= nrm;
    let max_iter = n.min(400);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut b_basis: Vec<DVector<f64>> = Vec::new();
    let mut alphas = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut last = f64::NAN;
    for j in 0..max_iter {
        let av = apply_a(&v);
        let alpha = av.dot(&v);
        let mut w = solve_b(&av);
        basis.push(v.clone());
        b_basis.push(bv.clone());
        alphas.push(alpha);
        for _ in 0..2 {
            for (q, bq) in basis.iter().zip(&b_basis) {
                let c = w.dot(bq);
                w.axpy(-c, q, 1.0);
            }
        }
        let bw = apply_b(&w);
        let beta = w.dot(&bw).max(0.0).sqrt();
        let theta = tridiagonal_max(&alphas, &betas)?;
        let converged = (theta - last).abs() <= 1e-14 * theta.abs().max(1e-300);
        if converged || beta <= 1e-13 * theta.abs().max(1.0) || j + 1 == max_iter {
            return Ok(theta);
        }
        last = theta;
        betas.push(beta);
        v = w / beta;
        bv = bw / beta;
    }
    Err(Error::Eigen("Lanczos did not converge".into()))
}

fn tridiagonal_max(alphas: &[f64], betas: &[f64]) -> Result<f64> {
    let m = alphas.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    max_sym_eig(&t)
}
