//! Dense reference solvers for small problems.

use nalgebra::{DMatrix, DVector};

use crate::densela::{cholesky, spd_solve, symmetrize};
use crate::error::{check_len, Error, Result};
use crate::linop::{to_dense, DenseBudget, LinearOperator, NoiseCovariance};
use crate::priorcov::PriorModel;

/// Fully materialized problem `d = A s + ε`, `ε ~ N(0, R)`, `s ~ N(μ, λ⁻² Q)`.
#[derive(Clone, Debug)]
pub struct DenseProblem {
    pub a: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub d: Vec<f64>,
    pub mu: Vec<f64>,
    pub lambda: f64,
}

impl DenseProblem {
    pub fn new(a: DMatrix<f64>, r: DMatrix<f64>, q: DMatrix<f64>, d: Vec<f64>, mu: Option<Vec<f64>>, lambda: f64) -> Result<Self> {
        let (m, n) = a.shape();
        check_len("noise covariance", m, r.nrows())?;
        check_len("noise covariance", m, r.ncols())?;
        check_len("prior covariance", n, q.nrows())?;
        check_len("prior covariance", n, q.ncols())?;
        check_len("data", m, d.len())?;
        let mu = mu.unwrap_or_else(|| vec![0.0; n]);
        check_len("prior mean", n, mu.len())?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::param(format!("λ must be finite and nonnegative, got {lambda}")));
        }
        Ok(Self { a, r, q, d, mu, lambda })
    }

    /// Densify operator inputs, refusing anything over `budget`.
    pub fn from_operators(
        a: &dyn LinearOperator,
        r: &NoiseCovariance,
        prior: &PriorModel,
        d: &[f64],
        lambda: f64,
        budget: DenseBudget,
    ) -> Result<Self> {
        let n = prior.dim();
        budget.check(n, n)?;
        budget.check(r.dim(), r.dim())?;
        let a = to_dense(a, budget)?;
        let q = to_dense(prior.q().as_ref(), budget)?;
        Self::new(a, r.to_matrix(), q, d.to_vec(), Some(prior.mean().to_vec()), lambda)
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    fn mu(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mu)
    }

    fn d(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.d)
    }
}

fn inverse_spd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(cholesky(m, what)?.inverse()))
}

/// `(AᵀR⁻¹A + λ²Q⁻¹) s = AᵀR⁻¹d + λ²Q⁻¹μ`.
pub fn map_normal_equations(p: &DenseProblem) -> Result<Vec<f64>> {
    let rchol = cholesky(&p.r, "noise covariance")?;
    let qinv = inverse_spd(&p.q, "prior covariance")?;
    let rinv_a = rchol.solve(&p.a);
    let l2 = p.lambda * p.lambda;
    let lhs = symmetrize(p.a.transpose() * &rinv_a + &qinv * l2);
    let rhs = rinv_a.transpose() * p.d() + &qinv * p.mu() * l2;
    let s = spd_solve(&lhs, &DMatrix::from_column_slice(p.n(), 1, rhs.as_slice()), "normal equations")?;
    Ok(s.iter().copied().collect())
}

/// Stacked least squares `min ‖L_R(As − d)‖² + λ²‖L_Q(s − μ)‖²` with
/// `R⁻¹ = L_RᵀL_R`, `Q⁻¹ = L_QᵀL_Q`, solved by QR.
pub fn map_general_tikhonov(p: &DenseProblem) -> Result<Vec<f64>> {
    let (m, n) = (p.m(), p.n());
    let cr = cholesky(&p.r, "noise covariance")?;
    let cq = cholesky(&p.q, "prior covariance")?;
    // R = C Cᵀ ⇒ L_R = C⁻¹.
    let lr_a = cr.l().solve_lower_triangular(&p.a).ok_or_else(|| singular("noise factor"))?;
    let lr_d = cr.l().solve_lower_triangular(&p.d()).ok_or_else(|| singular("noise factor"))?;
    let lq = cq
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| singular("prior factor"))?;
    let lq_mu = &lq * p.mu();

    let mut k = DMatrix::zeros(m + n, n);
    k.view_mut((0, 0), (m, n)).copy_from(&lr_a);
    k.view_mut((m, 0), (n, n)).copy_from(&(&lq * p.lambda));
    let mut rhs = DVector::zeros(m + n);
    rhs.rows_mut(0, m).copy_from(&lr_d);
    rhs.rows_mut(m, n).copy_from(&(lq_mu * p.lambda));

    let qr = k.clone().qr();
    let r = qr.r();
    if (0..n).any(|i| r[(i, i)].abs() <= 1e-14 * r.amax()) {
        return Err(singular("stacked Tikhonov system"));
    }
    let qtb = qr.q().transpose() * &rhs;
    let mut s = r.solve_upper_triangular(&qtb).ok_or_else(|| singular("stacked Tikhonov system"))?;
    // One refinement step on the least-squares residual.
    let res = &rhs - &k * &s;
    let corr = r
        .solve_upper_triangular(&(qr.q().transpose() * res))
        .ok_or_else(|| singular("stacked Tikhonov system"))?;
    s += corr;
    Ok(s.iter().copied().collect())
}

fn singular(what: &str) -> Error {
    Error::Conditioning {
        what: what.to_string(),
        min_eig: 0.0,
    }
}

/// `(AQAᵀ + λ²R) ξ = d − Aμ`, `s = μ + QAᵀξ`.
pub fn map_sherman_morrison(p: &DenseProblem) -> Result<Vec<f64>> {
    let qat = &p.q * p.a.transpose();
    let lhs = symmetrize(&p.a * &qat + &p.r * (p.lambda * p.lambda));
    let rhs = p.d() - &p.a * p.mu();
    let xi = spd_solve(&lhs, &DMatrix::from_column_slice(p.m(), 1, rhs.as_slice()), "data-space system")?;
    let s = p.mu() + qat * xi.column(0);
    Ok(s.iter().copied().collect())
}

/// `Γ_post = (λ²Q⁻¹ + AᵀR⁻¹A)⁻¹`.
pub fn dense_posterior(p: &DenseProblem) -> Result<DMatrix<f64>> {
    if !(p.lambda > 0.0) {
        return Err(Error::param("posterior covariance needs λ > 0"));
    }
    let rchol = cholesky(&p.r, "noise covariance")?;
    let qinv = inverse_spd(&p.q, "prior covariance")?;
    let h = p.a.transpose() * rchol.solve(&p.a);
    let prec = symmetrize(h + qinv * (p.lambda * p.lambda));
    inverse_spd(&prec, "posterior precision")
}

/// Full-form GCV `n‖L_R(A s(λ) − d)‖² / trace(I_m − L_R A A_λ†)²` with
/// `A_λ† = (AᵀR⁻¹A + λ²Q⁻¹)⁻¹ AᵀL_Rᵀ`; assumes `μ = 0`.
pub fn gcv_full(p: &DenseProblem, lambda: f64) -> Result<f64> {
    if !p.mu.iter().all(|v| *v == 0.0) {
        return Err(Error::param("full-form GCV assumes a zero prior mean"));
    }
    let cr = cholesky(&p.r, "noise covariance")?;
    let qinv = inverse_spd(&p.q, "prior covariance")?;
    let lr_a = cr.l().solve_lower_triangular(&p.a).ok_or_else(|| singular("noise factor"))?;
    let lr_d = cr.l().solve_lower_triangular(&p.d()).ok_or_else(|| singular("noise factor"))?;
    let lhs = symmetrize(lr_a.transpose() * &lr_a + qinv * (lambda * lambda));
    let chol = cholesky(&lhs, "regularized normal equations")?;
    let s = chol.solve(&(lr_a.transpose() * &lr_d));
    let misfit = (&lr_a * s - lr_d).norm_squared();
    // trace(L_R A M⁻¹ AᵀL_Rᵀ) = ‖C_M⁻¹ AᵀL_Rᵀ‖_F²
    let w = chol
        .l()
        .solve_lower_triangular(&lr_a.transpose())
        .ok_or_else(|| singular("regularized normal equations"))?;
    let trace = p.m() as f64 - w.norm_squared();
    Ok(p.n() as f64 * misfit / (trace * trace))
}

/// λ minimizing [`gcv_full`] with the same log grid and golden-section
/// refinement as the projected rule. The grid is scaled by the largest
/// singular value of `L_R A C_Q` with `Q = C_Q C_Qᵀ`.
pub fn select_lambda_full(p: &DenseProblem) -> Result<f64> {
    let cr = cholesky(&p.r, "noise covariance")?;
    let cq = cholesky(&p.q, "prior covariance")?;
    let lr_a = cr.l().solve_lower_triangular(&p.a).ok_or_else(|| singular("noise factor"))?;
    let whitened = lr_a * cq.l();
    let s_max = whitened.singular_values().max();
    let (lambda, _) = crate::hybrid::minimize_log_grid(s_max, |l| {
        gcv_full(&p.with_lambda(l), l).unwrap_or(f64::INFINITY)
    });
    Ok(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gengk::tests::spd_with_condition;
    use crate::linop::testing::{random_dense, random_vec};
    use crate::vecops::rel_diff;

    fn identity_problem(n: usize, lambda: f64) -> DenseProblem {
        let i = DMatrix::identity(n, n);
        DenseProblem::new(i.clone(), i.clone(), i, random_vec(n, 1), None, lambda).unwrap()
    }

    fn random_problem(m: usize, n: usize, lambda: f64, seed: u64) -> DenseProblem {
        DenseProblem::new(
            random_dense(m, n, seed),
            spd_with_condition(m, 100.0, seed + 1),
            spd_with_condition(n, 1e3, seed + 2),
            random_vec(m, seed + 3),
            Some(random_vec(n, seed + 4)),
            lambda,
        )
        .unwrap()
    }

    #[test]
    fn identity_instance() {
        let p = identity_problem(5, 2.0);
        let want: Vec<f64> = p.d.iter().map(|d| d / 5.0).collect();
        for s in [map_normal_equations(&p), map_general_tikhonov(&p), map_sherman_morrison(&p)] {
            assert!(rel_diff(&s.unwrap(), &want) < 1e-15);
        }
        let g = dense_posterior(&p).unwrap();
        assert!((g - DMatrix::identity(5, 5) * 0.2).amax() < 1e-15);
    }

    #[test]
    fn huge_lambda_gives_mean() {
        let mut p = random_problem(6, 8, 1e8, 3);
        let s = map_normal_equations(&p).unwrap();
        assert!(rel_diff(&s, &p.mu) < 1e-8);
        p.lambda = 1.0;
        let s = map_normal_equations(&p).unwrap();
        let qinv = p.q.clone().try_inverse().unwrap();
        let rinv = p.r.clone().try_inverse().unwrap();
        let lhs = p.a.transpose() * &rinv * &p.a + &qinv;
        let rhs = p.a.transpose() * rinv * p.d() + qinv * p.mu();
        let resid = (lhs * DVector::from_vec(s) - &rhs).norm() / rhs.norm();
        assert!(resid < 1e-10);
    }

    #[test]
    fn three_formulations_agree() {
        for seed in 0..50u64 {
            let m = 10 + (seed as usize * 7) % 60;
            let n = 5 + (seed as usize * 13) % 70;
            let lambda = [0.1, 1.0, 10.0][seed as usize % 3];
            let p = random_problem(m, n, lambda, seed * 10);
            let a = map_normal_equations(&p).unwrap();
            let b = map_general_tikhonov(&p).unwrap();
            let c = map_sherman_morrison(&p).unwrap();
            assert!(rel_diff(&a, &b) < 1e-10, "seed {seed}: {}", rel_diff(&a, &b));
            assert!(rel_diff(&a, &c) < 1e-10, "seed {seed}: {}", rel_diff(&a, &c));
        }
    }

    #[test]
    fn lambda_zero_is_data_consistent() {
        let mut p = random_problem(5, 9, 0.0, 7);
        let s = map_sherman_morrison(&p).unwrap();
        let r = &p.a * DVector::from_vec(s) - p.d();
        assert!(r.norm() < 1e-10 * p.d().norm());
        assert!(map_normal_equations(&p).is_err());
        p.a = DMatrix::zeros(5, 9);
        assert!(map_sherman_morrison(&p).is_err());
    }

    #[test]
    fn posterior_without_data_is_prior() {
        let mut p = random_problem(4, 6, 2.0, 1);
        p.a = DMatrix::zeros(4, 6);
        let g = dense_posterior(&p).unwrap();
        assert!((g - &p.q * 0.25).amax() < 1e-10);
        let p = random_problem(7, 6, 0.5, 2);
        let g = dense_posterior(&p).unwrap();
        assert!((&g - g.transpose()).amax() < 1e-12 * g.amax());
        assert!(g.symmetric_eigenvalues().min() > 0.0);
        let p0 = DenseProblem { lambda: 0.0, ..p };
        assert!(dense_posterior(&p0).is_err());
    }

    #[test]
    fn full_gcv_identity_closed_form() {
        // A = R = Q = I: G(λ) = ‖d‖²/n for every λ.
        let p = identity_problem(6, 1.0);
        let want = p.d().norm_squared() / 6.0;
        for l in [0.1, 1.0, 7.0] {
            assert!((gcv_full(&p, l).unwrap() - want).abs() < 1e-12 * want);
        }
        let p = DenseProblem { mu: vec![1.0; 6], ..p };
        assert!(gcv_full(&p, 1.0).is_err());
    }

    #[test]
    fn full_gcv_large_lambda_limit() {
        let mut p = random_problem(8, 5, 1.0, 4);
        p.mu = vec![0.0; 5];
        let g = gcv_full(&p, 1e8).unwrap();
        let rinv = p.r.clone().try_inverse().unwrap();
        let want = 5.0 * (p.d().transpose() * rinv * p.d())[0] / 64.0;
        assert!((g - want).abs() < 1e-6 * want);
    }
}
