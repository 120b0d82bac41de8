use super::{apply_columns, apply_rows, LinearOperator, OpRef, OperatorShape};
use crate::error::{check_len, Error, Result};

/// `left ⊗ right`, applied through the reshape identity
/// `(L ⊗ R) vec(X) = vec(R X Lᵀ)`.
///
/// In space-time problems `left` is the temporal factor and `right` the
/// spatial one.
#[derive(Clone, Debug)]
pub struct KroneckerOperator {
    left: OpRef,
    right: OpRef,
}

impl KroneckerOperator {
    pub fn new(left: OpRef, right: OpRef) -> Self {
        Self { left, right }
    }

    pub fn left(&self) -> &OpRef {
        &self.left
    }

    pub fn right(&self) -> &OpRef {
        &self.right
    }
}

/// Applies `X -> R (X Lᵀ)`: temporal mixing first, then the spatial factor.
fn kron_left_first(left: &dyn LinearOperator, right: &dyn LinearOperator, adjoint: bool, x: &[f64], y: &mut [f64]) {
    let (ls, rs) = (left.shape(), right.shape());
    let (l_out, r_in) = if adjoint {
        (ls.cols, rs.rows)
    } else {
        (ls.rows, rs.cols)
    };
    // X is r_in x l_in; W = X Lᵀ is r_in x l_out; Y = R W is r_out x l_out.
    let mut w = vec![0.0; r_in * l_out];
    apply_rows(left, adjoint, x, r_in, &mut w);
    apply_columns(right, adjoint, &w, l_out, y);
}

/// Applies `X -> (R X) Lᵀ`: spatial factor on each time slice first.
fn kron_right_first(left: &dyn LinearOperator, right: &dyn LinearOperator, adjoint: bool, x: &[f64], y: &mut [f64]) {
    let (ls, rs) = (left.shape(), right.shape());
    let (l_in, r_out) = if adjoint {
        (ls.rows, rs.cols)
    } else {
        (ls.cols, rs.rows)
    };
    let mut t = vec![0.0; r_out * l_in];
    apply_columns(right, adjoint, x, l_in, &mut t);
    apply_rows(left, adjoint, &t, r_out, y);
}

impl LinearOperator for KroneckerOperator {
    fn shape(&self) -> OperatorShape {
        let (l, r) = (self.left.shape(), self.right.shape());
        OperatorShape::new(l.rows * r.rows, l.cols * r.cols)
    }

    fn apply_to(&self, x: &[f64], y: &mut [f64]) {
        kron_left_first(self.left.as_ref(), self.right.as_ref(), false, x, y)
    }

    fn apply_adjoint_to(&self, y: &[f64], x: &mut [f64]) {
        kron_left_first(self.left.as_ref(), self.right.as_ref(), true, y, x)
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        if !self.shape().is_square() {
            return None;
        }
        let dl = self.left.diagonal()?;
        let dr = self.right.diagonal()?;
        Some(dl.iter().flat_map(|a| dr.iter().map(move |b| a * b)).collect())
    }
}

/// `(Q_t ⊗ Q_s) x` evaluated as `vec(Q_s X Q_tᵀ)` with `X = mat(x)`: one
/// `Q_s` product per time slice followed by one `Q_t` product per spatial row.
pub fn kron_matvec_reshaped(
    q_t: &dyn LinearOperator,
    q_s: &dyn LinearOperator,
    x: &[f64],
) -> Result<Vec<f64>> {
    let (ts, ss) = (q_t.shape(), q_s.shape());
    check_len("kron_matvec_reshaped", ts.cols * ss.cols, x.len())?;
    let mut y = vec![0.0; ts.rows * ss.rows];
    kron_right_first(q_t, q_s, false, x, &mut y);
    Ok(y)
}

/// `Σ_j c_j (L_j ⊗ R_j)`, e.g. a product-sum space-time covariance.
#[derive(Clone, Debug)]
pub struct SumKroneckerOperator {
    terms: Vec<(f64, KroneckerOperator)>,
    shape: OperatorShape,
}

impl SumKroneckerOperator {
    pub fn new(terms: Vec<(f64, OpRef, OpRef)>) -> Result<Self> {
        let terms: Vec<_> = terms
            .into_iter()
            .map(|(c, l, r)| (c, KroneckerOperator::new(l, r)))
            .collect();
        let shape = terms
            .first()
            .map(|(_, k)| k.shape())
            .ok_or_else(|| Error::param("sum of Kronecker products needs at least one term"))?;
        for (_, k) in &terms {
            let s = k.shape();
            if s != shape {
                return Err(Error::param(format!(
                    "Kronecker term shape {s} differs from {shape}"
                )));
            }
        }
        Ok(Self { terms, shape })
    }

    pub fn terms(&self) -> impl Iterator<Item = (f64, &KroneckerOperator)> {
        self.terms.iter().map(|(c, k)| (*c, k))
    }
}

impl LinearOperator for SumKroneckerOperator {
    fn shape(&self) -> OperatorShape {
        self.shape
    }

    fn apply_to(&self, x: &[f64], y: &mut [f64]) {
        let (c0, k0) = &self.terms[0];
        k0.apply_to(x, y);
        if *c0 != 1.0 {
            y.iter_mut().for_each(|v| *v *= c0);
        }
        let mut tmp = vec![0.0; y.len()];
        for (c, k) in &self.terms[1..] {
            k.apply_to(x, &mut tmp);
            for (y, t) in y.iter_mut().zip(&tmp) {
                *y += c * t;
            }
        }
    }

    fn apply_adjoint_to(&self, y: &[f64], x: &mut [f64]) {
        let (c0, k0) = &self.terms[0];
        k0.apply_adjoint_to(y, x);
        if *c0 != 1.0 {
            x.iter_mut().for_each(|v| *v *= c0);
        }
        let mut tmp = vec![0.0; x.len()];
        for (c, k) in &self.terms[1..] {
            k.apply_adjoint_to(y, &mut tmp);
            for (x, t) in x.iter_mut().zip(&tmp) {
                *x += c * t;
            }
        }
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        let mut out = vec![0.0; self.shape.rows];
        for (c, k) in &self.terms {
            for (o, d) in out.iter_mut().zip(k.diagonal()?) {
                *o += c * d;
            }
        }
        Some(out)
    }
}
