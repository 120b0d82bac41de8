//! Prior covariance construction: kernels, point sets, temporal models and
//! the [`PriorModel`] consumed by the solvers.
//!
//! Covariances are stored without the `λ⁻²` factor; the solvers own `λ`.

mod bessel;
mod kernel;

pub use bessel::{bessel_k, ln_bessel_k};
pub use kernel::{gamma_exp_eval, matern_eval, GammaExpKernel, Kernel, MaternKernel, NonseparableKernel};

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linop::{
    diagonal_of, DenseBudget, DenseOperator, KroneckerOperator, OnesOperator, OpRef,
    ScaledIdentityOperator, SumKroneckerOperator,
};

pub const DEFAULT_NUGGET: f64 = 1e-10;

/// Matrices above this order are not Cholesky-checked after assembly.
pub const SPD_CHECK_MAX_ORDER: usize = 2048;

/// Locations in `R^d`, stored point-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
    normalized: bool,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::param(format!(
                "{} coordinates do not form points of dimension {dim}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::param("point coordinates must be finite"));
        }
        Ok(Self {
            dim,
            coords,
            normalized: false,
        })
    }

    pub fn from_times(times: &[f64]) -> Result<Self> {
        Self::new(1, times.to_vec())
    }

    /// Pixel centers of an `nx x ny` grid on the unit square, `x` varying
    /// fastest (matching column-major images).
    pub fn grid_2d(nx: usize, ny: usize) -> Self {
        let mut coords = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                coords.push((i as f64 + 0.5) / nx as f64);
                coords.push((j as f64 + 0.5) / ny as f64);
            }
        }
        Self {
            dim: 2,
            coords,
            normalized: false,
        }
    }

    /// Affinely map each coordinate to `[0, 1]`. Constant coordinates map to 0.
    pub fn normalized(&self) -> Self {
        let mut coords = self.coords.clone();
        for k in 0..self.dim {
            let col = || self.coords.iter().skip(k).step_by(self.dim);
            let lo = col().copied().fold(f64::INFINITY, f64::min);
            let hi = col().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            for c in coords.iter_mut().skip(k).step_by(self.dim) {
                *c = if span > 0.0 { (*c - lo) / span } else { 0.0 };
            }
        }
        Self {
            dim: self.dim,
            coords,
            normalized: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn dist2(&self, i: usize, j: usize) -> f64 {
        self.point(i)
            .iter()
            .zip(self.point(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Fill a symmetric `n x n` matrix from `f(i, j)` with columns in parallel.
fn assemble_symmetric(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> DMatrix<f64> {
    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n.max(1))
        .enumerate()
        .for_each(|(j, col)| {
            for (i, v) in col.iter_mut().enumerate() {
                *v = f(i, j);
            }
        });
    DMatrix::from_vec(n, n, data)
}

/// Confirm positive definiteness by Cholesky factorization.
pub fn check_spd(matrix: &DMatrix<f64>, what: &str) -> Result<()> {
    if matrix.nrows() > SPD_CHECK_MAX_ORDER {
        return Ok(());
    }
    if Cholesky::new(matrix.clone()).is_none() {
        return Err(Error::Conditioning {
            what: what.to_string(),
            min_eig: matrix.clone().symmetric_eigenvalues().min(),
        });
    }
    Ok(())
}

/// `(Q)_{ij} = κ(‖p_i - p_j‖) + nugget·δ_{ij}`.
pub fn build_kernel_matrix(kernel: &Kernel, points: &PointSet, nugget: f64) -> Result<DenseOperator> {
    if points.is_empty() {
        return Err(Error::param("kernel matrix needs at least one point"));
    }
    if !(nugget >= 0.0) {
        return Err(Error::param(format!("nugget must be nonnegative, got {nugget}")));
    }
    let m = assemble_symmetric(points.len(), |i, j| {
        let v = kernel.eval(points.dist2(i, j).sqrt());
        if i == j {
            v + nugget
        } else {
            v
        }
    });
    check_spd(&m, "kernel covariance")?;
    Ok(DenseOperator::new(m))
}

/// Spatial prior on an `nx x ny` pixel grid. A Gaussian kernel factors
/// exactly over coordinates, giving `Q_y ⊗ Q_x`; any other kernel is
/// assembled densely.
pub fn build_grid_spatial_prior(kernel: &Kernel, nx: usize, ny: usize, nugget: f64) -> Result<OpRef> {
    let gaussian = matches!(kernel, Kernel::Matern(k) if k.nu().is_infinite());
    if gaussian {
        let axis = |n: usize| -> Result<OpRef> {
            let t: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
            Ok(Arc::new(build_kernel_matrix(kernel, &PointSet::from_times(&t)?, nugget)?))
        };
        return Ok(Arc::new(KroneckerOperator::new(axis(ny)?, axis(nx)?)));
    }
    Ok(Arc::new(build_kernel_matrix(kernel, &PointSet::grid_2d(nx, ny), nugget)?))
}

/// Random-walk prior: `(Q_t)_{ij} = min(i, j)` (one-based) and its
/// tridiagonal inverse.
pub fn build_minij_prior(n_t: usize) -> Result<(DenseOperator, DenseOperator)> {
    if n_t < 1 {
        return Err(Error::param("minij prior needs n_t ≥ 1"));
    }
    let q = DMatrix::from_fn(n_t, n_t, |i, j| (i.min(j) + 1) as f64);
    let inv = DMatrix::from_fn(n_t, n_t, |i, j| {
        if i == j {
            if i + 1 == n_t {
                1.0
            } else {
                2.0
            }
        } else if i.abs_diff(j) == 1 {
            -1.0
        } else {
            0.0
        }
    });
    Ok((DenseOperator::new(q), DenseOperator::new(inv)))
}

/// First-difference operator `L_t` with rows `(e_i - e_{i+1})/(t_{i+1} - t_i)`
/// and `Q_t = (L_tᵀ L_t + γ I)⁻¹`.
pub fn build_fd_temporal(t: &[f64], gamma: f64) -> Result<(DenseOperator, DenseOperator)> {
    let n = t.len();
    if n < 2 {
        return Err(Error::param("finite-difference prior needs at least two times"));
    }
    if !(gamma > 0.0) {
        return Err(Error::param(format!("temporal nugget γ must be positive, got {gamma}")));
    }
    if t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::param("time points must be strictly increasing"));
    }
    let l = fd_matrix(t);
    let prec = l.transpose() * &l + DMatrix::identity(n, n) * gamma;
    let q = spd_inverse(prec, "finite-difference temporal precision")?;
    Ok((DenseOperator::new(l), DenseOperator::new(q)))
}

fn fd_matrix(t: &[f64]) -> DMatrix<f64> {
    let n = t.len();
    let mut l = DMatrix::zeros(n - 1, n);
    for i in 0..n - 1 {
        let h = 1.0 / (t[i + 1] - t[i]);
        l[(i, i)] = h;
        l[(i, i + 1)] = -h;
    }
    l
}

/// Inverse of an SPD matrix, symmetrized.
pub(crate) fn spd_inverse(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = Cholesky::new(m.clone()).ok_or_else(|| Error::Conditioning {
        what: what.to_string(),
        min_eig: m.symmetric_eigenvalues().min(),
    })?;
    let inv = chol.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// `Q = Q_t ⊗ λ_s⁻² I_{n_s}` with `Q_t = (I + (λ_t²/λ_s²) L_tᵀ L_t)⁻¹`.
pub fn build_schmitt_prior(lambda_s: f64, lambda_t: f64, l_t: &DMatrix<f64>, n_s: usize) -> Result<KroneckerOperator> {
    if !(lambda_s > 0.0 && lambda_s.is_finite()) {
        return Err(Error::param(format!("λ_s must be positive, got {lambda_s}")));
    }
    if !(lambda_t >= 0.0) {
        return Err(Error::param(format!("λ_t must be nonnegative, got {lambda_t}")));
    }
    let n_t = l_t.ncols();
    let ratio = (lambda_t / lambda_s).powi(2);
    let prec = DMatrix::identity(n_t, n_t) + l_t.transpose() * l_t * ratio;
    let q_t = spd_inverse(prec, "Schmitt temporal precision")?;
    Ok(KroneckerOperator::new(
        Arc::new(DenseOperator::new(q_t)),
        Arc::new(ScaledIdentityOperator::new(lambda_s.powi(-2), n_s)),
    ))
}

/// Dense space-time covariance from a nonseparable kernel. Unknowns are
/// ordered space-fastest: index `i_s + n_s i_t`.
pub fn build_nonseparable_q(
    kernel: &NonseparableKernel,
    space: &PointSet,
    times: &[f64],
    nugget: f64,
    budget: DenseBudget,
) -> Result<DenseOperator> {
    let (n_s, n_t) = (space.len(), times.len());
    let n = n_s * n_t;
    budget.check(n, n)?;
    if n == 0 {
        return Err(Error::param("nonseparable covariance needs points and times"));
    }
    let m = assemble_symmetric(n, |a, b| {
        let (is, it) = (a % n_s, a / n_s);
        let (js, jt) = (b % n_s, b / n_s);
        let v = kernel.eval(space.dist2(is, js), times[it] - times[jt]);
        if a == b {
            v + nugget
        } else {
            v
        }
    });
    check_spd(&m, "nonseparable space-time covariance")?;
    Ok(DenseOperator::new(m))
}

/// Product-sum weights `a₀ C_S⁰ C_T⁰ + a₁ C_S¹ + a₂ C_T²`. No defaults.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductSum {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
}

/// `a₀ (Q_t⁰ ⊗ Q_s⁰) + a₁ (1 1ᵀ ⊗ Q_s¹) + a₂ (Q_t² ⊗ 1 1ᵀ)`; terms with a zero
/// coefficient are dropped.
pub fn build_product_sum(
    w: ProductSum,
    q_t0: OpRef,
    q_s0: OpRef,
    q_s1: OpRef,
    q_t2: OpRef,
) -> Result<SumKroneckerOperator> {
    if [w.a0, w.a1, w.a2].iter().any(|a| !(*a >= 0.0)) {
        return Err(Error::param("product-sum coefficients must be nonnegative"));
    }
    let (n_t, n_s) = (q_t0.rows(), q_s0.rows());
    let mut terms = Vec::new();
    if w.a0 > 0.0 {
        terms.push((w.a0, q_t0, q_s0));
    }
    if w.a1 > 0.0 {
        terms.push((w.a1, Arc::new(OnesOperator::new(n_t, n_t)) as OpRef, q_s1));
    }
    if w.a2 > 0.0 {
        terms.push((w.a2, q_t2, Arc::new(OnesOperator::new(n_s, n_s)) as OpRef));
    }
    SumKroneckerOperator::new(terms)
}

/// Temporal covariance choices for a separable prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TemporalPrior {
    Identity,
    Kernel { kernel: Kernel, times: Vec<f64>, nugget: f64 },
    Minij,
    FiniteDifference { times: Vec<f64>, gamma: f64 },
}

impl TemporalPrior {
    /// Dense `n_t x n_t` covariance.
    pub fn matrix(&self, n_t: usize) -> Result<DMatrix<f64>> {
        let times_len = |t: &[f64]| check_len("temporal prior times", n_t, t.len());
        Ok(match self {
            TemporalPrior::Identity => DMatrix::identity(n_t, n_t),
            TemporalPrior::Kernel { kernel, times, nugget } => {
                times_len(times)?;
                build_kernel_matrix(kernel, &PointSet::from_times(times)?, *nugget)?.into_matrix()
            }
            TemporalPrior::Minij => build_minij_prior(n_t)?.0.into_matrix(),
            TemporalPrior::FiniteDifference { times, gamma } => {
                times_len(times)?;
                build_fd_temporal(times, *gamma)?.1.into_matrix()
            }
        })
    }
}

#[derive(Clone, Debug)]
enum Structure {
    /// `Q_t ⊗ Q_s` with a small dense temporal factor.
    Separable { q_t: DMatrix<f64>, q_s: OpRef },
    General,
}

/// Prior `s ~ N(μ, λ⁻² Q)` over an `n_s x n_t` space-time field.
#[derive(Clone, Debug)]
pub struct PriorModel {
    mean: Vec<f64>,
    q: OpRef,
    structure: Structure,
    n_s: usize,
    n_t: usize,
}

impl PriorModel {
    /// Separable prior `Q_t ⊗ Q_s`; `mean = None` means zero mean.
    pub fn separable(q_t: DMatrix<f64>, q_s: OpRef, mean: Option<Vec<f64>>) -> Result<Self> {
        if !q_t.is_square() || !q_s.shape().is_square() {
            return Err(Error::param("prior covariance factors must be square"));
        }
        let (n_t, n_s) = (q_t.nrows(), q_s.rows());
        let q: OpRef = Arc::new(KroneckerOperator::new(Arc::new(DenseOperator::new(q_t.clone())), q_s.clone()));
        let mean = Self::check_mean(mean, n_s * n_t)?;
        Ok(Self {
            mean,
            q,
            structure: Structure::Separable { q_t, q_s },
            n_s,
            n_t,
        })
    }

    /// Any SPD covariance operator of order `n_s n_t`.
    pub fn general(q: OpRef, n_s: usize, n_t: usize, mean: Option<Vec<f64>>) -> Result<Self> {
        let s = q.shape();
        if !s.is_square() || s.rows != n_s * n_t {
            return Err(Error::Shape {
                context: "prior covariance",
                expected: n_s * n_t,
                got: s.rows,
            });
        }
        let mean = Self::check_mean(mean, n_s * n_t)?;
        Ok(Self {
            mean,
            q,
            structure: Structure::General,
            n_s,
            n_t,
        })
    }

    fn check_mean(mean: Option<Vec<f64>>, n: usize) -> Result<Vec<f64>> {
        let mean = mean.unwrap_or_else(|| vec![0.0; n]);
        check_len("prior mean", n, mean.len())?;
        Ok(mean)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn has_zero_mean(&self) -> bool {
        self.mean.iter().all(|v| *v == 0.0)
    }

    pub fn q(&self) -> &OpRef {
        &self.q
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn dim(&self) -> usize {
        self.n_s * self.n_t
    }

    /// `(Q_t, Q_s)` for separable priors.
    pub fn kronecker_factors(&self) -> Option<(&DMatrix<f64>, &OpRef)> {
        match &self.structure {
            Structure::Separable { q_t, q_s } => Some((q_t, q_s)),
            Structure::General => None,
        }
    }

    /// `diag(Q)`, from factor diagonals when separable.
    pub fn q_diagonal(&self) -> Result<Vec<f64>> {
        if let Structure::Separable { q_t, q_s } = &self.structure {
            let ds = diagonal_of(q_s.as_ref())?;
            return Ok(q_t
                .diagonal()
                .iter()
                .flat_map(|a| ds.iter().map(move |b| a * b))
                .collect());
        }
        diagonal_of(self.q.as_ref())
    }
}
