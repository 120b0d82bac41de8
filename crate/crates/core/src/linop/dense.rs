use nalgebra::{DMatrix, DVectorView, DVectorViewMut};

use super::{LinearOperator, OperatorShape};
use crate::error::{Error, Result};

/// Explicitly stored matrix.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    matrix: DMatrix<f64>,
}

impl DenseOperator {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    /// Build from row-major nested rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::param("ragged rows in dense matrix"));
        }
        Ok(Self::new(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j])))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }
}

impl From<DMatrix<f64>> for DenseOperator {
    fn from(m: DMatrix<f64>) -> Self {
        Self::new(m)
    }
}

impl LinearOperator for DenseOperator {
    fn shape(&self) -> OperatorShape {
        OperatorShape::new(self.matrix.nrows(), self.matrix.ncols())
    }

    fn apply_to(&self, x: &[f64], y: &mut [f64]) {
        let xv = DVectorView::from_slice(x, x.len());
        let mut yv = DVectorViewMut::from_slice(y, y.len());
        yv.gemv(1.0, &self.matrix, &xv, 0.0);
    }

    fn apply_adjoint_to(&self, y: &[f64], x: &mut [f64]) {
        let yv = DVectorView::from_slice(y, y.len());
        let mut xv = DVectorViewMut::from_slice(x, x.len());
        xv.gemv_tr(1.0, &self.matrix, &yv, 0.0);
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        self.shape()
            .is_square()
            .then(|| self.matrix.diagonal().iter().copied().collect())
    }

    fn as_dense(&self) -> Option<&DMatrix<f64>> {
        Some(&self.matrix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::testing::{adjoint_gap, random_dense};

    #[test]
    fn column_and_row_extraction() {
        let a = DenseOperator::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(a.apply(&[1.0, 0.0]).unwrap(), vec![1.0, 3.0]);
        assert_eq!(a.apply_adjoint(&[1.0, 0.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(DenseOperator::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn adjoint_consistency() {
        let a = DenseOperator::new(random_dense(7, 4, 11));
        assert!(adjoint_gap(&a, 5) < 1e-12);
    }
}
