use super::{LinearOperator, OperatorShape};
use crate::error::{Error, Result};

/// `diag(d)`.
#[derive(Clone, Debug)]
pub struct DiagonalOperator {
    values: Vec<f64>,
}

impl DiagonalOperator {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    /// Diagonal flagged as SPD: every entry must be strictly positive and finite.
    pub fn new_spd(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::param(format!("SPD diagonal has non-positive entry {v}")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn apply_inverse_to(&self, x: &[f64], y: &mut [f64]) {
        for ((y, x), d) in y.iter_mut().zip(x).zip(&self.values) {
            *y = x / d;
        }
    }

    pub fn apply_sqrt_to(&self, x: &[f64], y: &mut [f64]) {
        for ((y, x), d) in y.iter_mut().zip(x).zip(&self.values) {
            *y = x * d.sqrt();
        }
    }

    pub fn apply_inverse_sqrt_to(&self, x: &[f64], y: &mut [f64]) {
        for ((y, x), d) in y.iter_mut().zip(x).zip(&self.values) {
            *y = x / d.sqrt();
        }
    }
}

impl LinearOperator for DiagonalOperator {
    fn shape(&self) -> OperatorShape {
        OperatorShape::new(self.values.len(), self.values.len())
    }

    fn apply_to(&self, x: &[f64], y: &mut [f64]) {
        for ((y, x), d) in y.iter_mut().zip(x).zip(&self.values) {
            *y = x * d;
        }
    }

    fn apply_adjoint_to(&self, y: &[f64], x: &mut [f64]) {
        self.apply_to(y, x)
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(self.values.clone())
    }
}

/// `c · I_n`; with `c = σ²` this is the usual white-noise covariance.
#[derive(Clone, Copy, Debug)]
pub struct ScaledIdentityOperator {
    scale: f64,
    n: usize,
}

impl ScaledIdentityOperator {
    pub fn new(scale: f64, n: usize) -> Self {
        Self { scale, n }
    }

    pub fn identity(n: usize) -> Self {
        Self::new(1.0, n)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

impl LinearOperator for ScaledIdentityOperator {
    fn shape(&self) -> OperatorShape {
        OperatorShape::new(self.n, self.n)
    }

    fn apply_to(&self, x: &[f64], y: &mut [f64]) {
        if self.scale == 1.0 {
            y.copy_from_slice(x);
        } else {
            for (y, x) in y.iter_mut().zip(x) {
                *y = self.scale * x;
            }
        }
    }

    fn apply_adjoint_to(&self, y: &[f64], x: &mut [f64]) {
        self.apply_to(y, x)
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(vec![self.scale; self.n])
    }
}
