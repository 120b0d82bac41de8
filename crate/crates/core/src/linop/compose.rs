use super::{LinearOperator, OpRef, OperatorShape};
use crate::error::{Error, Result};

/// `outer · inner`. The adjoint is `innerᵀ · outerᵀ`.
#[derive(Clone, Debug)]
pub struct CompositionOperator {
    outer: OpRef,
    inner: OpRef,
}

impl CompositionOperator {
    pub fn new(outer: OpRef, inner: OpRef) -> Result<Self> {
        let (o, i) = (outer.shape(), inner.shape());
        if o.cols != i.rows {
            return Err(Error::Shape {
                context: "composition",
                expected: o.cols,
                got: i.rows,
            });
        }
        Ok(Self { outer, inner })
    }
}

impl LinearOperator for CompositionOperator {
    fn shape(&self) -> OperatorShape {
        OperatorShape::new(self.outer.rows(), self.inner.cols())
    }

    fn apply_to(&self, x: &[f64], y: &mut [f64]) {
        let mut tmp = vec![0.0; self.inner.rows()];
        self.inner.apply_to(x, &mut tmp);
        self.outer.apply_to(&tmp, y);
    }

    fn apply_adjoint_to(&self, y: &[f64], x: &mut [f64]) {
        let mut tmp = vec![0.0; self.outer.cols()];
        self.outer.apply_adjoint_to(y, &mut tmp);
        self.inner.apply_adjoint_to(&tmp, x);
    }
}

/// `c · A`.
#[derive(Clone, Debug)]
pub struct ScaledOperator {
    scale: f64,
    op: OpRef,
}

impl ScaledOperator {
    pub fn new(scale: f64, op: OpRef) -> Self {
        Self { scale, op }
    }
}

impl LinearOperator for ScaledOperator {
    fn shape(&self) -> OperatorShape {
        self.op.shape()
    }

    fn apply_to(&self, x: &[f64], y: &mut [f64]) {
        self.op.apply_to(x, y);
        y.iter_mut().for_each(|v| *v *= self.scale);
    }

    fn apply_adjoint_to(&self, y: &[f64], x: &mut [f64]) {
        self.op.apply_adjoint_to(y, x);
        x.iter_mut().for_each(|v| *v *= self.scale);
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(self.op.diagonal()?.into_iter().map(|d| d * self.scale).collect())
    }
}

/// Matrix of all ones, `1_{rows} 1_{cols}ᵀ`, applied in O(rows + cols).
#[derive(Clone, Copy, Debug)]
pub struct OnesOperator {
    rows: usize,
    cols: usize,
}

impl OnesOperator {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }
}

impl LinearOperator for OnesOperator {
    fn shape(&self) -> OperatorShape {
        OperatorShape::new(self.rows, self.cols)
    }

    fn apply_to(&self, x: &[f64], y: &mut [f64]) {
        let s: f64 = x.iter().sum();
        y.iter_mut().for_each(|v| *v = s);
    }

    fn apply_adjoint_to(&self, y: &[f64], x: &mut [f64]) {
        let s: f64 = y.iter().sum();
        x.iter_mut().for_each(|v| *v = s);
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        (self.rows == self.cols).then(|| vec![1.0; self.rows])
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::linop::testing::{adjoint_gap, random_dense};
    use crate::linop::{to_dense, DenseBudget, DenseOperator};

    #[test]
    fn composition_matches_product() {
        let a = random_dense(4, 3, 1);
        let b = random_dense(3, 5, 2);
        let c = CompositionOperator::new(
            Arc::new(DenseOperator::new(a.clone())),
            Arc::new(DenseOperator::new(b.clone())),
        )
        .unwrap();
        let d = to_dense(&c, DenseBudget::default()).unwrap();
        assert!((d - &a * &b).abs().max() < 1e-14);
        assert!(adjoint_gap(&c, 3) < 1e-12);
    }

    #[test]
    fn composition_rejects_mismatch() {
        let a: OpRef = Arc::new(DenseOperator::new(random_dense(4, 3, 1)));
        assert!(CompositionOperator::new(a.clone(), a).is_err());
    }

    #[test]
    fn ones_and_scaled() {
        let o = OnesOperator::new(2, 3);
        assert_eq!(o.apply(&[1.0, 2.0, 3.0]).unwrap(), vec![6.0, 6.0]);
        assert!(adjoint_gap(&o, 1) < 1e-12);
        let s = ScaledOperator::new(-2.0, Arc::new(o));
        assert_eq!(s.apply(&[1.0, 1.0, 1.0]).unwrap(), vec![-6.0, -6.0]);
        assert!(adjoint_gap(&s, 2) < 1e-12);
    }
}
