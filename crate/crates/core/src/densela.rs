//! Small dense factorizations shared by the oracles and the decoupled solver.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::Conditioning {
        what: what.to_string(),
        min_eig: m.clone().symmetric_eigenvalues().min(),
    })
}

/// Solve `M x = rhs` for SPD `M` with one step of iterative refinement.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = cholesky(m, what)?;
    let mut x = chol.solve(rhs);
    let r = rhs - m * &x;
    x += chol.solve(&r);
    Ok(x)
}

/// Symmetric `M^{-1/2}` of an SPD matrix via its eigendecomposition.
pub fn sym_inv_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        return Err(Error::Conditioning {
            what: what.to_string(),
            min_eig: min,
        });
    }
    let d = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&d) * v.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_square_root() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = sym_inv_sqrt(&m, "m").unwrap();
        let check = &s * &m * &s;
        assert!((check - DMatrix::identity(2, 2)).amax() < 1e-14);
        assert!(sym_inv_sqrt(&DMatrix::from_row_slice(1, 1, &[-1.0]), "m").is_err());
    }

    #[test]
    fn refined_solve() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let x = spd_solve(&m, &DMatrix::from_column_slice(2, 1, &[3.0, 3.0]), "m").unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
        assert!(cholesky(&DMatrix::zeros(2, 2), "zero").is_err());
    }
}
