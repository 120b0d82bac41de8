//! Matrix-free linear operators.
//!
//! Every solver in this crate touches its matrices only through
//! [`LinearOperator::apply`] and [`LinearOperator::apply_adjoint`]. Concrete
//! operators cover the structures that show up in space-time problems:
//! dense blocks, diagonals, Kronecker products (and sums of them),
//! block-diagonal forward models, compositions and sparse ray matrices.
//!
//! Vectorization convention: a vector of length `p * q` is identified with a
//! `p x q` matrix by stacking columns (column-major). For a space-time field
//! with `n_s` spatial points and `n_t` times, column `i` of the `n_s x n_t`
//! matrix is the spatial field at time `i`, so `(Q_t ⊗ Q_s) vec(X) =
//! vec(Q_s X Q_tᵀ)`.

mod blockdiag;
mod compose;
mod covariance;
mod dense;
mod diagonal;
pub mod io;
mod kron;
mod sparse;

pub use blockdiag::BlockDiagOperator;
pub use compose::{CompositionOperator, OnesOperator, ScaledOperator};
pub use covariance::NoiseCovariance;
pub use dense::DenseOperator;
pub use diagonal::{DiagonalOperator, ScaledIdentityOperator};
pub use kron::{kron_matvec_reshaped, KroneckerOperator, SumKroneckerOperator};
pub use sparse::SparseOperator;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};

/// Shared, immutable handle to an operator.
pub type OpRef = Arc<dyn LinearOperator>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OperatorShape {
    pub rows: usize,
    pub cols: usize,
}

impl OperatorShape {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
}

impl fmt::Display for OperatorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// A linear map `R^cols -> R^rows` available only through products.
///
/// Implementors provide the unchecked kernels `apply_to` / `apply_adjoint_to`,
/// which overwrite their output buffer. The provided `apply` /
/// `apply_adjoint` wrappers validate lengths and allocate.
pub trait LinearOperator: Send + Sync + fmt::Debug {
    fn shape(&self) -> OperatorShape;

    /// `y <- A x`. `x.len() == cols`, `y.len() == rows`.
    fn apply_to(&self, x: &[f64], y: &mut [f64]);

    /// `x <- Aᵀ y`. `y.len() == rows`, `x.len() == cols`.
    fn apply_adjoint_to(&self, y: &[f64], x: &mut [f64]);

    /// Diagonal of a square operator, when it can be had cheaply.
    fn diagonal(&self) -> Option<Vec<f64>> {
        None
    }

    /// Borrow the explicit matrix, for operators that hold one.
    fn as_dense(&self) -> Option<&DMatrix<f64>> {
        None
    }

    fn rows(&self) -> usize {
        self.shape().rows
    }

    fn cols(&self) -> usize {
        self.shape().cols
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let shape = self.shape();
        check_len("apply", shape.cols, x.len())?;
        let mut y = vec![0.0; shape.rows];
        self.apply_to(x, &mut y);
        Ok(y)
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        let shape = self.shape();
        check_len("apply_adjoint", shape.rows, y.len())?;
        let mut x = vec![0.0; shape.cols];
        self.apply_adjoint_to(y, &mut x);
        Ok(x)
    }
}

/// Maximum number of entries [`to_dense`] will materialize.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseBudget(pub usize);

impl Default for DenseBudget {
    fn default() -> Self {
        DenseBudget(4096 * 4096)
    }
}

impl DenseBudget {
    pub fn check(&self, rows: usize, cols: usize) -> Result<()> {
        match rows.checked_mul(cols) {
            Some(n) if n <= self.0 => Ok(()),
            _ => Err(Error::Budget {
                rows,
                cols,
                budget: self.0,
            }),
        }
    }
}

/// Materialize an operator column by column: entry `(i, j)` is `(A e_j)_i`.
pub fn to_dense(op: &dyn LinearOperator, budget: DenseBudget) -> Result<DMatrix<f64>> {
    let OperatorShape { rows, cols } = op.shape();
    budget.check(rows, cols)?;
    if let Some(m) = op.as_dense() {
        return Ok(m.clone());
    }
    let mut out = DMatrix::zeros(rows, cols);
    let mut e = vec![0.0; cols];
    let mut y = vec![0.0; rows];
    for j in 0..cols {
        e[j] = 1.0;
        op.apply_to(&e, &mut y);
        out.column_mut(j).copy_from_slice(&y);
        e[j] = 0.0;
    }
    Ok(out)
}

/// Diagonal of a square operator, probing with unit vectors when the
/// operator has no cheaper route.
pub fn diagonal_of(op: &dyn LinearOperator) -> Result<Vec<f64>> {
    let shape = op.shape();
    if !shape.is_square() {
        return Err(Error::param(format!("diagonal of non-square {shape} operator")));
    }
    if let Some(d) = op.diagonal() {
        return Ok(d);
    }
    let n = shape.rows;
    let mut e = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut d = Vec::with_capacity(n);
    for j in 0..n {
        e[j] = 1.0;
        op.apply_to(&e, &mut y);
        d.push(y[j]);
        e[j] = 0.0;
    }
    Ok(d)
}

/// Apply `op` (or its adjoint) to each column of a column-major matrix.
pub(crate) fn apply_columns(
    op: &dyn LinearOperator,
    adjoint: bool,
    input: &[f64],
    ncols: usize,
    out: &mut [f64],
) {
    use rayon::prelude::*;
    let shape = op.shape();
    let (in_len, out_len) = if adjoint {
        (shape.rows, shape.cols)
    } else {
        (shape.cols, shape.rows)
    };
    debug_assert_eq!(input.len(), in_len * ncols);
    debug_assert_eq!(out.len(), out_len * ncols);
    if ncols == 0 || out_len == 0 {
        return;
    }
    if in_len == 0 {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    if let Some(d) = op.as_dense() {
        let x = nalgebra::DMatrixView::from_slice(input, in_len, ncols);
        let mut y = nalgebra::DMatrixViewMut::from_slice(out, out_len, ncols);
        if adjoint {
            y.gemm_tr(1.0, d, &x, 0.0);
        } else {
            y.gemm(1.0, d, &x, 0.0);
        }
        return;
    }
    let work = in_len.max(out_len) * ncols;
    if work >= PAR_THRESHOLD && ncols > 1 {
        out.par_chunks_mut(out_len)
            .zip(input.par_chunks(in_len))
            .for_each(|(y, x)| apply_one(op, adjoint, x, y));
    } else {
        for (y, x) in out.chunks_mut(out_len).zip(input.chunks(in_len)) {
            apply_one(op, adjoint, x, y);
        }
    }
}

/// Apply `op` to every row of a column-major `nrows x in_len` matrix,
/// i.e. `out = input · opᵀ` (or `input · op` for the adjoint).
pub(crate) fn apply_rows(
    op: &dyn LinearOperator,
    adjoint: bool,
    input: &[f64],
    nrows: usize,
    out: &mut [f64],
) {
    let shape = op.shape();
    let (in_len, out_len) = if adjoint {
        (shape.rows, shape.cols)
    } else {
        (shape.cols, shape.rows)
    };
    debug_assert_eq!(input.len(), nrows * in_len);
    debug_assert_eq!(out.len(), nrows * out_len);
    if nrows == 0 || out_len == 0 {
        return;
    }
    if let Some(d) = op.as_dense() {
        let x = nalgebra::DMatrixView::from_slice(input, nrows, in_len);
        let mut y = nalgebra::DMatrixViewMut::from_slice(out, nrows, out_len);
        if adjoint {
            // out = X D
            y.gemm(1.0, &x, d, 0.0);
        } else {
            let dt = d.transpose();
            y.gemm(1.0, &x, &dt, 0.0);
        }
        return;
    }
    let xt = transpose(input, nrows, in_len);
    let mut yt = vec![0.0; out_len * nrows];
    apply_columns(op, adjoint, &xt, nrows, &mut yt);
    transpose_into(&yt, out_len, nrows, out);
}

fn apply_one(op: &dyn LinearOperator, adjoint: bool, x: &[f64], y: &mut [f64]) {
    if adjoint {
        op.apply_adjoint_to(x, y)
    } else {
        op.apply_to(x, y)
    }
}

/// Work size (vector entries touched) above which loops go parallel.
pub(crate) const PAR_THRESHOLD: usize = 1 << 15;

/// Transpose a column-major `rows x cols` matrix.
pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    transpose_into(a, rows, cols, &mut out);
    out
}

pub(crate) fn transpose_into(a: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for j in 0..cols {
        for i in 0..rows {
            out[j + i * cols] = a[i + j * rows];
        }
    }
}
