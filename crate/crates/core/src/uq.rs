//! Low-rank posterior covariance `λ⁻²Q − Z_k Δ_k Z_kᵀ` from gen-GK
//! byproducts, and its diagonal.

use nalgebra::{DMatrix, SVD};
use rayon::prelude::*;

use crate::decoupled::{DecoupledPlan, SubproblemSolution};
use crate::error::{check_len, Error, Result};
use crate::gengk::GenGkFactorization;
use crate::linop::{diagonal_of, DenseBudget, OpRef};
use crate::priorcov::PriorModel;
use crate::vecops::{combine, dot};

/// Ritz values below this fraction of the largest are dropped.
pub const THETA_CUTOFF: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct PosteriorApprox {
    lambda: f64,
    q: OpRef,
    q_diag: Vec<f64>,
    /// Columns of `Z_k = Q V_k W_k` for the retained Ritz pairs.
    z: Vec<Vec<f64>>,
    /// `λ⁻² θ / (θ + λ²)`
    delta: Vec<f64>,
    /// Retained eigenvalues of `B_kᵀ B_k`, descending.
    thetas: Vec<f64>,
}

/// Approximation from the full factorization.
pub fn build_posterior_approx(fact: &GenGkFactorization, prior: &PriorModel, lambda: f64) -> Result<PosteriorApprox> {
    PosteriorApprox::new(fact, prior.q().clone(), prior.q_diagonal()?, lambda, fact.k())
}

impl PosteriorApprox {
    /// Uses the first `k` steps of `fact`; `q_diag` is `diag(Q)`.
    pub fn new(fact: &GenGkFactorization, q: OpRef, q_diag: Vec<f64>, lambda: f64, k: usize) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::param(format!("posterior approximation needs λ > 0, got {lambda}")));
        }
        if k > fact.k() {
            return Err(Error::param(format!("rank {k} exceeds factorization size {}", fact.k())));
        }
        check_len("prior diagonal", q.rows(), q_diag.len())?;
        let mut this = Self {
            lambda,
            q,
            q_diag,
            z: Vec::new(),
            delta: Vec::new(),
            thetas: Vec::new(),
        };
        if k == 0 {
            return Ok(this);
        }
        // θ_i = s_i² from the SVD of B_k; W_k its right singular vectors.
        let b = fact.bidiagonal_prefix(k).to_dense();
        let svd = SVD::new(b, false, true);
        let w = svd.v_t.expect("right singular vectors requested").transpose();
        let thetas: Vec<f64> = svd.singular_values.iter().map(|s| s * s).collect();
        let theta_max = thetas.first().copied().unwrap_or(0.0);
        let l2 = lambda * lambda;
        let n = this.q.rows();
        for (j, &theta) in thetas.iter().enumerate() {
            if !(theta > THETA_CUTOFF * theta_max) {
                continue;
            }
            let coeffs: Vec<f64> = w.column(j).iter().copied().collect();
            let mut col = vec![0.0; n];
            combine(&coeffs, &fact.qv[..k], &mut col);
            this.z.push(col);
            this.delta.push(theta / (theta + l2) / l2);
            this.thetas.push(theta);
        }
        Ok(this)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn rank(&self) -> usize {
        self.z.len()
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn z_columns(&self) -> &[Vec<f64>] {
        &self.z
    }

    /// `Γ̂ x = λ⁻² Q x − Z Δ Zᵀ x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.q.apply(x)?;
        let l2inv = 1.0 / (self.lambda * self.lambda);
        y.iter_mut().for_each(|v| *v *= l2inv);
        let coeffs: Vec<f64> = self.z.iter().zip(&self.delta).map(|(z, d)| -d * dot(z, x)).collect();
        let mut corr = vec![0.0; y.len()];
        combine(&coeffs, &self.z, &mut corr);
        y.iter_mut().zip(&corr).for_each(|(y, c)| *y += c);
        Ok(y)
    }

    pub fn to_dense(&self, budget: DenseBudget) -> Result<DMatrix<f64>> {
        let n = self.q.rows();
        budget.check(n, n)?;
        let mut out = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            out.column_mut(j).copy_from_slice(&self.apply(&e)?);
            e[j] = 0.0;
        }
        Ok(out)
    }

    /// `diag(Z Δ Zᵀ)`.
    pub fn deflation_diag(&self) -> Vec<f64> {
        let n = self.q_diag.len();
        (0..n)
            .into_par_iter()
            .map(|i| self.z.iter().zip(&self.delta).map(|(z, d)| d * z[i] * z[i]).sum())
            .collect()
    }

    /// `λ⁻² diag(Q) − diag(Z Δ Zᵀ)`.
    pub fn variance_diag(&self) -> Vec<f64> {
        let l2inv = 1.0 / (self.lambda * self.lambda);
        self.q_diag
            .iter()
            .zip(self.deflation_diag())
            .map(|(q, d)| l2inv * q - d)
            .collect()
    }
}

/// Variance field (`n_s x n_t`) from the decoupled subproblems:
/// `λ⁻² [Q_t]_ii diag(Q_s) − Σ_j M_ij² diag(D_j)` with `M = L_tᵀ V_t` and
/// `D_j` the deflation term of subproblem `j`.
pub fn decoupled_variance_diag(plan: &DecoupledPlan, subproblems: &[SubproblemSolution], lambda: f64) -> Result<DMatrix<f64>> {
    let (n_s, n_t) = (plan.n_s(), plan.n_t());
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param(format!("posterior approximation needs λ > 0, got {lambda}")));
    }
    let qs_diag = diagonal_of(plan.q_s().as_ref())?;
    let mut deflations: Vec<Option<Vec<f64>>> = vec![None; n_t];
    for (j, &sigma) in plan.sigma().iter().enumerate() {
        if sigma == 0.0 {
            continue;
        }
        let sol = subproblems
            .iter()
            .find(|s| s.index == j)
            .ok_or_else(|| Error::param(format!("missing subproblem for time index {j}")))?;
        let fact = sol
            .factorization
            .as_ref()
            .ok_or_else(|| Error::param(format!("missing factorization for time index {j}")))?;
        let approx = PosteriorApprox::new(fact, plan.q_s().clone(), qs_diag.clone(), lambda, fact.k())?;
        deflations[j] = Some(approx.deflation_diag());
    }
    let mix = plan.temporal_mixing();
    let q_t = plan.q_t();
    let l2inv = 1.0 / (lambda * lambda);
    let mut out = DMatrix::zeros(n_s, n_t);
    for i in 0..n_t {
        let mut col: Vec<f64> = qs_diag.iter().map(|q| l2inv * q_t[(i, i)] * q).collect();
        for (j, d) in deflations.iter().enumerate() {
            if let Some(d) = d {
                let w = mix[(i, j)] * mix[(i, j)];
                col.iter_mut().zip(d).for_each(|(c, d)| *c -= w * d);
            }
        }
        out.column_mut(i).copy_from_slice(&col);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::decoupled::{solve_decoupled, DecoupledOptions};
    use crate::gengk::{bidiagonalize, tests::spd_with_condition};
    use crate::hybrid::{HybridOptions, RegStrategy};
    use crate::linop::testing::{kron_dense, random_dense, random_vec};
    use crate::linop::{DenseOperator, NoiseCovariance, ScaledIdentityOperator};
    use crate::oracle::{dense_posterior, DenseProblem};

    fn identity_prior(n: usize) -> PriorModel {
        PriorModel::general(Arc::new(ScaledIdentityOperator::identity(n)), n, 1, None).unwrap()
    }

    #[test]
    fn identity_instance() {
        let i = ScaledIdentityOperator::identity(1);
        let r = NoiseCovariance::identity(1);
        let prior = identity_prior(1);
        let fact = bidiagonalize(&i, &r, prior.q().as_ref(), &[1.0], 5, true).unwrap();
        let approx = build_posterior_approx(&fact, &prior, 1.0).unwrap();
        assert_eq!(approx.thetas(), &[1.0]);
        assert!((approx.variance_diag()[0] - 0.5).abs() < 1e-15);
        assert!(build_posterior_approx(&fact, &prior, 0.0).is_err());
    }

    #[test]
    fn rank_zero_is_prior() {
        let n = 5;
        let q = spd_with_condition(n, 10.0, 1);
        let qop: crate::linop::OpRef = Arc::new(DenseOperator::new(q.clone()));
        let a = DenseOperator::new(random_dense(4, n, 2));
        let r = NoiseCovariance::identity(4);
        let fact = bidiagonalize(&a, &r, qop.as_ref(), &random_vec(4, 3), 3, true).unwrap();
        let approx = PosteriorApprox::new(&fact, qop.clone(), q.diagonal().iter().copied().collect(), 2.0, 0).unwrap();
        let v = approx.variance_diag();
        for i in 0..n {
            assert_eq!(v[i], q[(i, i)] / 4.0);
        }
    }

    struct Inst {
        a: nalgebra::DMatrix<f64>,
        r: nalgebra::DMatrix<f64>,
        q: nalgebra::DMatrix<f64>,
        d: Vec<f64>,
    }

    fn inst(m: usize, n: usize, seed: u64) -> Inst {
        Inst {
            a: random_dense(m, n, seed),
            r: spd_with_condition(m, 10.0, seed + 1),
            q: spd_with_condition(n, 100.0, seed + 2),
            d: random_vec(m, seed + 3),
        }
    }

    fn approx_at(p: &Inst, lambda: f64, k: usize) -> (PosteriorApprox, GenGkFactorization) {
        let a = DenseOperator::new(p.a.clone());
        let r = NoiseCovariance::dense(p.r.clone()).unwrap();
        let n = p.q.nrows();
        let prior = PriorModel::general(Arc::new(DenseOperator::new(p.q.clone())), n, 1, None).unwrap();
        let fact = bidiagonalize(&a, &r, prior.q().as_ref(), &p.d, k, true).unwrap();
        (build_posterior_approx(&fact, &prior, lambda).unwrap(), fact)
    }

    fn oracle(p: &Inst, lambda: f64) -> nalgebra::DMatrix<f64> {
        let dp = DenseProblem::new(p.a.clone(), p.r.clone(), p.q.clone(), p.d.clone(), None, lambda).unwrap();
        dense_posterior(&dp).unwrap()
    }

    #[test]
    fn full_rank_matches_dense_posterior() {
        for (m, n) in [(40, 25), (25, 25), (60, 30)] {
            let p = inst(m, n, m as u64);
            let (approx, fact) = approx_at(&p, 0.7, n);
            assert_eq!(fact.k(), n);
            let want = oracle(&p, 0.7);
            let got = approx.to_dense(DenseBudget::default()).unwrap();
            assert!((&got - &want).amax() < 1e-8 * want.amax());
            let v = approx.variance_diag();
            for i in 0..n {
                assert!((v[i] - want[(i, i)]).abs() < 1e-8 * want[(i, i)]);
            }
        }
    }

    #[test]
    fn deflation_bound_every_rank() {
        let p = inst(30, 40, 5);
        let lambda = 0.5;
        let l2inv = 1.0 / (lambda * lambda);
        let (_, fact) = approx_at(&p, lambda, 30);
        let qop: crate::linop::OpRef = Arc::new(DenseOperator::new(p.q.clone()));
        let qd: Vec<f64> = p.q.diagonal().iter().copied().collect();
        for k in 0..=fact.k() {
            let approx = PosteriorApprox::new(&fact, qop.clone(), qd.clone(), lambda, k).unwrap();
            assert!(approx.delta().iter().all(|d| *d >= 0.0 && *d < l2inv));
            for (v, q) in approx.variance_diag().iter().zip(&qd) {
                assert!(*v <= l2inv * q + 1e-12);
            }
        }
    }

    #[test]
    fn decoupled_full_rank_matches_dense() {
        let (m_s, n_s, n_t) = (14, 10, 3);
        let a_t = random_dense(n_t, n_t, 1);
        let a_s = random_dense(m_s, n_s, 2);
        let r_t = spd_with_condition(n_t, 3.0, 3);
        let r_s = spd_with_condition(m_s, 3.0, 4);
        let q_t = spd_with_condition(n_t, 10.0, 5);
        let q_s = spd_with_condition(n_s, 10.0, 6);
        let d = random_vec(m_s * n_t, 7);
        let plan = DecoupledPlan::build(
            &a_t,
            Arc::new(DenseOperator::new(a_s.clone())),
            &r_t,
            NoiseCovariance::dense(r_s.clone()).unwrap(),
            &q_t,
            Arc::new(DenseOperator::new(q_s.clone())),
            &d,
            None,
        )
        .unwrap();
        let lambda = 0.9;
        let opts = DecoupledOptions {
            hybrid: HybridOptions {
                max_iter: 100,
                ..Default::default()
            },
            ..Default::default()
        };
        let res = solve_decoupled(&plan, &RegStrategy::Fixed(lambda), &opts).unwrap();
        let var = decoupled_variance_diag(&plan, &res.subproblems, lambda).unwrap();
        let dp = DenseProblem::new(kron_dense(&a_t, &a_s), kron_dense(&r_t, &r_s), kron_dense(&q_t, &q_s), d, None, lambda).unwrap();
        let g = dense_posterior(&dp).unwrap();
        for i in 0..n_s * n_t {
            assert!((var.as_slice()[i] - g[(i, i)]).abs() < 1e-6 * g[(i, i)]);
        }
        let empty: Vec<SubproblemSolution> = Vec::new();
        assert!(decoupled_variance_diag(&plan, &empty, lambda).is_err());

        // Zero rank everywhere leaves the prior variance field.
        let mut zero = res.subproblems.clone();
        for s in &mut zero {
            s.factorization = s.factorization.as_ref().map(|f| f.truncated(0));
        }
        let var0 = decoupled_variance_diag(&plan, &zero, lambda).unwrap();
        for i in 0..n_t {
            for j in 0..n_s {
                let want = q_t[(i, i)] * q_s[(j, j)] / (lambda * lambda);
                assert!((var0[(j, i)] - want).abs() < 1e-14 * want);
            }
        }
    }
}
