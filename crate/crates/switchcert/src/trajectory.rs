use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::signal::TimeGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    State,
    Adjoint,
    Control,
    Output,
}

/// Time-indexed coefficient vectors, one column per grid node.
///
/// Controls are right-endpoint piecewise constant: column `k` acts on
/// `(t_{k-1}, t_k]`, so column 0 carries no weight. Adjoint columns `0..K-1`
/// hold the right limits `p(t_k⁺)`, the last column the terminal value, and
/// `left_limits` the values `p(t_s⁻)` at switching nodes.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub kind: Kind,
    pub values: DMatrix<f64>,
    pub left_limits: Vec<(usize, DVector<f64>)>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, kind: Kind, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != grid.n_nodes() {
            return Err(Error::Dimension(format!("{} columns for {} nodes", values.ncols(), grid.n_nodes())));
        }
        Ok(Self { grid, kind, values, left_limits: Vec::new() })
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    pub fn at(&self, k: usize) -> DVector<f64> {
        self.values.column(k).into_owned()
    }

    /// `p(t_k⁻)`: the stored left limit at a switching node, else the node value.
    pub fn left_at(&self, k: usize) -> DVector<f64> {
        self.left_limits
            .iter()
            .find(|(s, _)| *s == k)
            .map(|(_, v)| v.clone())
            .unwrap_or_else(|| self.at(k))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_matrix_csv(path, &self.grid, &self.values, "x")
    }
}

/// One row per time node: `t, name_0, name_1, ...`.
pub fn write_matrix_csv(path: &Path, grid: &TimeGrid, values: &DMatrix<f64>, name: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..values.nrows()).map(|i| format!("{name}_{i}")));
    w.write_record(&header)?;
    for k in 0..values.ncols() {
        let mut row = vec![format!("{}", grid.node(k))];
        row.extend(values.column(k).iter().map(|v| format!("{v:e}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
