//! Banded LU factorization without pivoting.
//!
//! Every matrix factored here (mass matrices, `M + τA`, symmetric parts of
//! stiffness matrices and their transposes) has a positive definite
//! symmetric part, so all leading principal minors are nonzero and the
//! factorization exists without row exchanges.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    bw: usize,
    width: usize,
    // row-major band storage, entry (i, j) at i * width + (j + bw - i)
    data: Vec<f64>,
    min_pivot: f64,
}

impl BandLu {
    pub fn from_csr(a: &CsrMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("square matrix expected, got {}x{}", n, a.ncols())));
        }
        let bw = bandwidth(a);
        let width = 2 * bw + 1;
        let mut data = vec![0.0; n * width];
        for (i, row) in a.row_iter().enumerate() {
            for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                data[i * width + (j + bw - i)] += v;
            }
        }
        Self::factor(n, bw, data)
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("square matrix expected, got {}x{}", n, a.ncols())));
        }
        let bw = n.saturating_sub(1);
        let width = 2 * bw + 1;
        let mut data = vec![0.0; n * width];
        for i in 0..n {
            for j in 0..n {
                data[i * width + (j + bw - i)] = a[(i, j)];
            }
        }
        Self::factor(n, bw, data)
    }

    fn factor(n: usize, bw: usize, mut data: Vec<f64>) -> Result<Self> {
        let width = 2 * bw + 1;
        let idx = |i: usize, j: usize| i * width + (j + bw - i);
        let mut min_pivot = f64::INFINITY;
        let scale = data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for k in 0..n {
            let pivot = data[idx(k, k)];
            if !pivot.is_finite() || pivot.abs() <= 1e-14 * scale {
                return Err(Error::Singular(format!("zero pivot at row {k}")));
            }
            min_pivot = min_pivot.min(pivot);
            let last = (k + bw).min(n - 1);
            for i in k + 1..=last {
                let l = data[idx(i, k)] / pivot;
                if l == 0.0 {
                    continue;
                }
                data[idx(i, k)] = l;
                for j in k + 1..=last {
                    data[idx(i, j)] -= l * data[idx(k, j)];
                }
            }
        }
        Ok(Self { n, bw, width, data, min_pivot })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Smallest pivot; for a symmetric matrix all pivots are positive iff it is SPD.
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + (j + self.bw - i)]
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let lo = i.saturating_sub(self.bw);
            let mut s = x[i];
            for j in lo..i {
                s -= self.at(i, j) * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + self.bw).min(n - 1);
            let mut s = x[i];
            for j in i + 1..=hi {
                s -= self.at(i, j) * x[j];
            }
            x[i] = s / self.at(i, i);
        }
    }

    /// Solves `Aᵀ x = b` with the same factors.
    pub fn solve_transpose(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_transpose_in_place(x.as_mut_slice());
        x
    }

    pub fn solve_transpose_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        // Uᵀ z = b
        for i in 0..n {
            let lo = i.saturating_sub(self.bw);
            let mut s = x[i];
            for j in lo..i {
                s -= self.at(j, i) * x[j];
            }
            x[i] = s / self.at(i, i);
        }
        // Lᵀ x = z
        for i in (0..n).rev() {
            let hi = (i + self.bw).min(n - 1);
            let mut s = x[i];
            for j in i + 1..=hi {
                s -= self.at(j, i) * x[j];
            }
            x[i] = s;
        }
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        for mut col in x.column_iter_mut() {
            self.solve_in_place(col.as_mut_slice());
        }
        x
    }
}

impl BandLu {
    /// `D^{-1/2} L⁻¹ B` for a symmetric positive definite factored matrix
    /// `A = L D Lᵀ`, so that `‖X x‖² = xᵀ Bᵀ A⁻¹ B x`.
    pub fn whiten_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        let mut x = b.clone();
        for mut col in x.column_iter_mut() {
            let c = col.as_mut_slice();
            for i in 0..n {
                let lo = i.saturating_sub(self.bw);
                let mut s = c[i];
                for j in lo..i {
                    s -= self.at(i, j) * c[j];
                }
                c[i] = s;
            }
            for (i, v) in c.iter_mut().enumerate() {
                *v /= self.at(i, i).sqrt();
            }
        }
        x
    }
}

pub fn bandwidth(a: &CsrMatrix<f64>) -> usize {
    let mut bw = 0;
    for (i, row) in a.row_iter().enumerate() {
        for &j in row.col_indices() {
            bw = bw.max(i.abs_diff(j));
        }
    }
    bw
}
