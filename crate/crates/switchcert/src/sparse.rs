//! Small helpers around CSR matrices.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

pub fn matvec(a: &CsrMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(a.nrows());
    matvec_into(a, x.as_slice(), y.as_mut_slice());
    y
}

pub fn matvec_into(a: &CsrMatrix<f64>, x: &[f64], y: &mut [f64]) {
    let offsets = a.row_offsets();
    let cols = a.col_indices();
    let vals = a.values();
    for (i, yi) in y.iter_mut().enumerate() {
        let mut s = 0.0;
        for idx in offsets[i]..offsets[i + 1] {
            s += vals[idx] * x[cols[idx]];
        }
        *yi = s;
    }
}

/// `Aᵀ x`
pub fn matvec_tr(a: &CsrMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(a.ncols());
    for (i, row) in a.row_iter().enumerate() {
        let xi = x[i];
        if xi == 0.0 {
            continue;
        }
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            y[j] += v * xi;
        }
    }
    y
}

pub fn mul_dense(a: &CsrMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(a.nrows(), x.ncols());
    for c in 0..x.ncols() {
        let xc = x.column(c).clone_owned();
        let mut yc = y.column_mut(c);
        matvec_into(a, xc.as_slice(), yc.as_mut_slice());
    }
    y
}

/// `xᵀ A x`
pub fn quad_form(a: &CsrMatrix<f64>, x: &DVector<f64>) -> f64 {
    let mut s = 0.0;
    for (i, row) in a.row_iter().enumerate() {
        let mut r = 0.0;
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            r += v * x[j];
        }
        s += x[i] * r;
    }
    s
}

/// `xᵀ A y`
pub fn bilinear(a: &CsrMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let mut s = 0.0;
    for (i, row) in a.row_iter().enumerate() {
        let mut r = 0.0;
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            r += v * y[j];
        }
        s += x[i] * r;
    }
    s
}

/// `α A + β B`
pub fn lincomb(alpha: f64, a: &CsrMatrix<f64>, beta: f64, b: &CsrMatrix<f64>) -> CsrMatrix<f64> {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let mut coo = CooMatrix::new(a.nrows(), a.ncols());
    for (m, s) in [(a, alpha), (b, beta)] {
        for (i, j, v) in m.triplet_iter() {
            coo.push(i, j, s * v);
        }
    }
    CsrMatrix::from(&coo)
}

/// `½ (A + Aᵀ)`
pub fn sym_part(a: &CsrMatrix<f64>) -> CsrMatrix<f64> {
    let mut coo = CooMatrix::new(a.nrows(), a.ncols());
    for (i, j, v) in a.triplet_iter() {
        coo.push(i, j, 0.5 * v);
        coo.push(j, i, 0.5 * v);
    }
    CsrMatrix::from(&coo)
}

pub fn to_dense(a: &CsrMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from(a)
}

pub fn from_dense(a: &DMatrix<f64>) -> CsrMatrix<f64> {
    let mut coo = CooMatrix::new(a.nrows(), a.ncols());
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let v = a[(i, j)];
            if v != 0.0 {
                coo.push(i, j, v);
            }
        }
    }
    CsrMatrix::from(&coo)
}

pub fn identity(n: usize) -> CsrMatrix<f64> {
    CsrMatrix::identity(n)
}

pub fn max_asymmetry(a: &CsrMatrix<f64>) -> f64 {
    let t = a.transpose();
    let d = lincomb(1.0, a, -1.0, &t);
    d.values().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
