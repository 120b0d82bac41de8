use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{apply_columns, apply_rows, DiagonalOperator, LinearOperator, OperatorShape};
use crate::error::{Error, Result};

/// SPD noise covariance `R` with cheap inverse application.
///
/// The generalized bidiagonalization needs `R⁻¹ v` at every step, so only
/// structures where that is inexpensive are admitted.
#[derive(Clone, Debug)]
pub enum NoiseCovariance {
    /// `σ² I_n`
    ScaledIdentity { variance: f64, n: usize },
    Diagonal(DiagonalOperator),
    /// Small dense SPD matrix together with its Cholesky factor.
    Dense {
        matrix: DMatrix<f64>,
        chol: Cholesky<f64, Dyn>,
    },
    /// `R_t ⊗ R_s`
    Kronecker(Box<NoiseCovariance>, Box<NoiseCovariance>),
}

impl NoiseCovariance {
    pub fn scaled_identity(variance: f64, n: usize) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::param(format!("noise variance must be positive, got {variance}")));
        }
        Ok(Self::ScaledIdentity { variance, n })
    }

    pub fn identity(n: usize) -> Self {
        Self::ScaledIdentity { variance: 1.0, n }
    }

    pub fn diagonal(values: Vec<f64>) -> Result<Self> {
        Ok(Self::Diagonal(DiagonalOperator::new_spd(values)?))
    }

    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::param("dense noise covariance must be square"));
        }
        let chol = Cholesky::new(matrix.clone()).ok_or_else(|| Error::Conditioning {
            what: "noise covariance".into(),
            min_eig: matrix.clone().symmetric_eigenvalues().min(),
        })?;
        Ok(Self::Dense { matrix, chol })
    }

    pub fn kronecker(temporal: NoiseCovariance, spatial: NoiseCovariance) -> Self {
        Self::Kronecker(Box::new(temporal), Box::new(spatial))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::ScaledIdentity { n, .. } => *n,
            Self::Diagonal(d) => d.rows(),
            Self::Dense { matrix, .. } => matrix.nrows(),
            Self::Kronecker(t, s) => t.dim() * s.dim(),
        }
    }

    /// `y <- R⁻¹ x`.
    pub fn apply_inverse_to(&self, x: &[f64], y: &mut [f64]) {
        match self {
            Self::ScaledIdentity { variance, .. } => {
                for (y, x) in y.iter_mut().zip(x) {
                    *y = x / variance;
                }
            }
            Self::Diagonal(d) => d.apply_inverse_to(x, y),
            Self::Dense { chol, .. } => {
                let sol = chol.solve(&DVector::from_column_slice(x));
                y.copy_from_slice(sol.as_slice());
            }
            Self::Kronecker(t, s) => {
                let (nt, ns) = (t.dim(), s.dim());
                let inv_t = InverseView(t);
                let inv_s = InverseView(s);
                let mut w = vec![0.0; ns * nt];
                apply_columns(&inv_s, false, x, nt, &mut w);
                apply_rows(&inv_t, false, &w, ns, y);
            }
        }
    }

    pub fn apply_inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_len("apply_inverse", self.dim(), x.len())?;
        let mut y = vec![0.0; x.len()];
        self.apply_inverse_to(x, &mut y);
        Ok(y)
    }

    /// Explicit matrix, for small covariances and test oracles.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            Self::ScaledIdentity { variance, n } => DMatrix::identity(*n, *n) * *variance,
            Self::Diagonal(d) => DMatrix::from_diagonal(&DVector::from_column_slice(d.values())),
            Self::Dense { matrix, .. } => matrix.clone(),
            Self::Kronecker(t, s) => t.to_matrix().kronecker(&s.to_matrix()),
        }
    }
}

/// Adapter exposing `R⁻¹` as an operator, for the reshape kernels.
#[derive(Debug)]
struct InverseView<'a>(&'a NoiseCovariance);

impl LinearOperator for InverseView<'_> {
    fn shape(&self) -> OperatorShape {
        OperatorShape::new(self.0.dim(), self.0.dim())
    }

    fn apply_to(&self, x: &[f64], y: &mut [f64]) {
        self.0.apply_inverse_to(x, y)
    }

    fn apply_adjoint_to(&self, y: &[f64], x: &mut [f64]) {
        self.0.apply_inverse_to(y, x)
    }
}

impl LinearOperator for NoiseCovariance {
    fn shape(&self) -> OperatorShape {
        OperatorShape::new(self.dim(), self.dim())
    }

    fn apply_to(&self, x: &[f64], y: &mut [f64]) {
        match self {
            Self::ScaledIdentity { variance, .. } => {
                for (y, x) in y.iter_mut().zip(x) {
                    *y = x * variance;
                }
            }
            Self::Diagonal(d) => d.apply_to(x, y),
            Self::Dense { matrix, .. } => {
                let r = matrix * DVector::from_column_slice(x);
                y.copy_from_slice(r.as_slice());
            }
            Self::Kronecker(t, s) => {
                let (nt, ns) = (t.dim(), s.dim());
                let mut w = vec![0.0; ns * nt];
                apply_columns(s.as_ref(), false, x, nt, &mut w);
                apply_rows(t.as_ref(), false, &w, ns, y);
            }
        }
    }

    fn apply_adjoint_to(&self, y: &[f64], x: &mut [f64]) {
        self.apply_to(y, x)
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(match self {
            Self::ScaledIdentity { variance, n } => vec![*variance; *n],
            Self::Diagonal(d) => d.values().to_vec(),
            Self::Dense { matrix, .. } => matrix.diagonal().iter().copied().collect(),
            Self::Kronecker(t, s) => {
                let (dt, ds) = (t.diagonal()?, s.diagonal()?);
                dt.iter().flat_map(|a| ds.iter().map(move |b| a * b)).collect()
            }
        })
    }

    fn as_dense(&self) -> Option<&DMatrix<f64>> {
        match self {
            Self::Dense { matrix, .. } => Some(matrix),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::testing::{random_dense, random_vec};

    fn spd(n: usize, seed: u64) -> DMatrix<f64> {
        let a = random_dense(n, n, seed);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn inverse_roundtrip_all_variants() {
        let covs = vec![
            NoiseCovariance::scaled_identity(4.0, 6).unwrap(),
            NoiseCovariance::diagonal((1..=6).map(|v| v as f64).collect()).unwrap(),
            NoiseCovariance::dense(spd(6, 1)).unwrap(),
            NoiseCovariance::kronecker(
                NoiseCovariance::dense(spd(2, 2)).unwrap(),
                NoiseCovariance::dense(spd(3, 3)).unwrap(),
            ),
        ];
        for r in covs {
            let x = random_vec(6, 7);
            let rx = r.apply(&x).unwrap();
            let back = r.apply_inverse(&rx).unwrap();
            let err = back.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "{r:?}: {err}");
            let dense = r.to_matrix();
            let want = &dense * DVector::from_column_slice(&x);
            let err = want.iter().zip(&rx).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12);
        }
    }

    #[test]
    fn rejects_invalid() {
        assert!(NoiseCovariance::scaled_identity(0.0, 3).is_err());
        assert!(NoiseCovariance::dense(-DMatrix::<f64>::identity(2, 2)).is_err());
    }
}
