//! Generalized Golub–Kahan bidiagonalization in the `R⁻¹` and `Q` inner
//! products.
//!
//! Starting from `β₁ u₁ = b` and `α₁ v₁ = Aᵀ R⁻¹ u₁`, each step computes
//!
//! ```text
//! β_{i+1} u_{i+1} = A Q v_i − α_i u_i
//! α_{i+1} v_{i+1} = Aᵀ R⁻¹ u_{i+1} − β_{i+1} v_i
//! ```
//!
//! with `‖u‖_{R⁻¹} = ‖v‖_Q = 1`. After `k` steps
//! `A Q V_k = U_{k+1} B_k` with `B_k` the `(k+1) x k` lower bidiagonal
//! matrix holding `α_1..α_k` on its diagonal and `β_2..β_{k+1}` below it.
//!
//! The products `R⁻¹ u_i` and `Q v_i` are stored alongside the basis
//! vectors, so a step costs one product each with `A`, `Aᵀ`, `Q` and `R⁻¹`.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linop::{LinearOperator, NoiseCovariance};
use crate::vecops::{axpy, combine, dot, norm2, scale};

/// Lower bidiagonal `(k+1) x k` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Bidiagonal {
    /// `α_1..α_k`
    pub alphas: Vec<f64>,
    /// `β_2..β_{k+1}`
    pub betas: Vec<f64>,
}

impl Bidiagonal {
    pub fn new(alphas: Vec<f64>, betas: Vec<f64>) -> Result<Self> {
        if alphas.len() != betas.len() {
            return Err(Error::Shape {
                context: "bidiagonal",
                expected: alphas.len(),
                got: betas.len(),
            });
        }
        Ok(Self { alphas, betas })
    }

    pub fn k(&self) -> usize {
        self.alphas.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let k = self.k();
        let mut b = DMatrix::zeros(k + 1, k);
        for i in 0..k {
            b[(i, i)] = self.alphas[i];
            b[(i + 1, i)] = self.betas[i];
        }
        b
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.alphas
            .iter()
            .chain(&self.betas)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Why a factorization stopped growing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Breakdown {
    /// `α_{k+1} = 0`: `v_{k+1}` is undefined.
    Alpha { k: usize },
    /// `β_{k+1} = 0`: `u_{k+1}` is undefined.
    Beta { k: usize },
}

impl Breakdown {
    pub fn k(&self) -> usize {
        match *self {
            Breakdown::Alpha { k } | Breakdown::Beta { k } => k,
        }
    }
}

/// Output of the bidiagonalization after `k` completed steps.
///
/// `u` holds `u_1..u_{k+1}` (only `u_1..u_k` after a β breakdown) and `v`
/// holds `v_1..v_{k+1}` (only `v_1..v_k` after an α breakdown).
#[derive(Clone, Debug)]
pub struct GenGkFactorization {
    pub beta1: f64,
    pub u: Vec<Vec<f64>>,
    /// `R⁻¹ u_i`
    pub rinv_u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// `Q v_i`
    pub qv: Vec<Vec<f64>>,
    /// `α_1..α_{k+1}` (`α_{k+1}` is 0 after an α breakdown)
    pub alphas: Vec<f64>,
    /// `β_2..β_{k+1}`
    pub betas: Vec<f64>,
    pub reorthogonalized: bool,
    pub breakdown: Option<Breakdown>,
}

impl GenGkFactorization {
    /// Number of completed steps.
    pub fn k(&self) -> usize {
        self.betas.len()
    }

    pub fn bidiagonal(&self) -> Bidiagonal {
        self.bidiagonal_prefix(self.k())
    }

    /// `B_j` for `j ≤ k`.
    pub fn bidiagonal_prefix(&self, j: usize) -> Bidiagonal {
        Bidiagonal {
            alphas: self.alphas[..j].to_vec(),
            betas: self.betas[..j].to_vec(),
        }
    }

    /// The factorization as it stood after `j ≤ k` steps.
    pub fn truncated(&self, j: usize) -> Self {
        let j = j.min(self.k());
        if j == self.k() {
            return self.clone();
        }
        Self {
            beta1: self.beta1,
            u: self.u[..j + 1].to_vec(),
            rinv_u: self.rinv_u[..j + 1].to_vec(),
            v: self.v[..(j + 1).min(self.v.len())].to_vec(),
            qv: self.qv[..(j + 1).min(self.qv.len())].to_vec(),
            alphas: self.alphas[..j + 1].to_vec(),
            betas: self.betas[..j].to_vec(),
            reorthogonalized: self.reorthogonalized,
            breakdown: None,
        }
    }

    /// `α_{k+1}`, zero after an α breakdown.
    pub fn next_alpha(&self) -> f64 {
        self.alphas.get(self.k()).copied().unwrap_or(0.0)
    }

    pub fn n(&self) -> usize {
        self.v.first().map_or(0, Vec::len)
    }

    pub fn m(&self) -> usize {
        self.u[0].len()
    }

    /// `Q V_j z` for `z` of length `j ≤ k`.
    pub fn qv_times(&self, z: &[f64]) -> Vec<f64> {
        let n = self.qv.first().map_or(0, Vec::len);
        let mut out = vec![0.0; n];
        combine(z, &self.qv[..z.len()], &mut out);
        out
    }

    /// `V_j z`.
    pub fn v_times(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        combine(z, &self.v[..z.len()], &mut out);
        out
    }

    /// Gen-GK relation residuals, evaluated with operator products.
    pub fn relation_report(&self, a: &dyn LinearOperator, b: &[f64]) -> RelationReport {
        let k = self.k();
        let bn = self.bidiagonal().frobenius_norm().max(f64::MIN_POSITIVE);
        let nu = self.u.len();

        let mut ub = self.u[0].clone();
        scale(self.beta1, &mut ub);
        let e_bk = norm2(&crate::vecops::sub(&ub, b)) / norm2(b).max(f64::MIN_POSITIVE);

        let mut e_vk = 0.0;
        for j in 0..k {
            let mut res = a.apply(&self.qv[j]).expect("factorization shapes");
            axpy(-self.alphas[j], &self.u[j], &mut res);
            if j + 1 < nu {
                axpy(-self.betas[j], &self.u[j + 1], &mut res);
            }
            e_vk += dot(&res, &res);
        }

        let mut e_uk = 0.0;
        for j in 0..nu.min(k + 1) {
            let mut res = a.apply_adjoint(&self.rinv_u[j]).expect("factorization shapes");
            if j < self.v.len() {
                axpy(-self.alphas[j], &self.v[j], &mut res);
            }
            if j >= 1 {
                axpy(-self.betas[j - 1], &self.v[j - 1], &mut res);
            }
            e_uk += dot(&res, &res);
        }

        let kv = k.min(self.v.len());
        RelationReport {
            k,
            orth_u: gram_deviation(&self.u[..nu.min(k + 1)], &self.rinv_u),
            orth_v: gram_deviation(&self.v[..kv], &self.qv),
            e_bk,
            e_vk: e_vk.sqrt() / bn,
            e_uk: e_uk.sqrt() / bn,
        }
    }

    /// Per-iteration diagnostics: `α_i`, `β_{i+1}`, orthogonality of the
    /// prefix bases and the residual of the `u` recurrence at step `i`.
    pub fn diagnostics(&self, a: &dyn LinearOperator) -> Vec<GkDiagnostic> {
        let k = self.k();
        let mut rows = Vec::with_capacity(k);
        let mut orth_u: f64 = (dot(&self.u[0], &self.rinv_u[0]) - 1.0).abs();
        let mut orth_v: f64 = 0.0;
        for i in 0..k {
            if i + 1 < self.u.len() {
                for j in 0..=i + 1 {
                    let g = dot(&self.u[i + 1], &self.rinv_u[j]);
                    orth_u = orth_u.max((g - if j == i + 1 { 1.0 } else { 0.0 }).abs());
                }
            }
            for j in 0..=i {
                let g = dot(&self.v[i], &self.qv[j]);
                orth_v = orth_v.max((g - if j == i { 1.0 } else { 0.0 }).abs());
            }
            let mut res = a.apply(&self.qv[i]).expect("factorization shapes");
            axpy(-self.alphas[i], &self.u[i], &mut res);
            if i + 1 < self.u.len() {
                axpy(-self.betas[i], &self.u[i + 1], &mut res);
            }
            let scale = self.alphas[i].abs() + self.betas[i].abs();
            rows.push(GkDiagnostic {
                iter: i + 1,
                alpha: self.alphas[i],
                beta: self.betas[i],
                orth_u,
                orth_v,
                rec_resid: norm2(&res) / scale.max(f64::MIN_POSITIVE),
            });
        }
        rows
    }
}

fn gram_deviation(x: &[Vec<f64>], mx: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        for j in 0..=i {
            let g = dot(&x[i], &mx[j]);
            worst = worst.max((g - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    worst
}

/// Deviations from the gen-GK relations. `e_vk` and `e_uk` are Frobenius
/// norms relative to `‖B_k‖_F`; `e_bk` is relative to `‖b‖`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelationReport {
    pub k: usize,
    pub orth_u: f64,
    pub orth_v: f64,
    pub e_bk: f64,
    pub e_vk: f64,
    pub e_uk: f64,
}

impl RelationReport {
    pub fn max_residual(&self) -> f64 {
        self.orth_u
            .max(self.orth_v)
            .max(self.e_bk)
            .max(self.e_vk)
            .max(self.e_uk)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GkDiagnostic {
    pub iter: usize,
    pub alpha: f64,
    pub beta: f64,
    pub orth_u: f64,
    pub orth_v: f64,
    pub rec_resid: f64,
}

pub fn write_diagnostics_csv(path: impl AsRef<Path>, rows: &[GkDiagnostic]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "iter,alpha,beta,orth_U,orth_V,rec_resid")?;
    for r in rows {
        writeln!(
            w,
            "{},{:?},{:?},{:?},{:?},{:?}",
            r.iter, r.alpha, r.beta, r.orth_u, r.orth_v, r.rec_resid
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Running bidiagonalization bound to its operators.
pub struct GenGk<'a> {
    a: &'a dyn LinearOperator,
    r: &'a NoiseCovariance,
    q: &'a dyn LinearOperator,
    fact: GenGkFactorization,
    tol: f64,
    op_seconds: f64,
}

impl<'a> GenGk<'a> {
    /// Steps 1–2: `β₁ = ‖b‖_{R⁻¹}`, `u₁ = b/β₁`, `α₁ v₁ = Aᵀ R⁻¹ u₁`.
    pub fn new(
        a: &'a dyn LinearOperator,
        r: &'a NoiseCovariance,
        q: &'a dyn LinearOperator,
        b: &[f64],
        reorthogonalize: bool,
    ) -> Result<Self> {
        let (m, n) = (a.rows(), a.cols());
        crate::error::check_len("noise covariance", m, r.dim())?;
        crate::error::check_len("prior covariance rows", n, q.rows())?;
        crate::error::check_len("prior covariance cols", n, q.cols())?;
        crate::error::check_len("data", m, b.len())?;

        let mut op_seconds = 0.0;
        let t = Instant::now();
        let mut rb = vec![0.0; m];
        r.apply_inverse_to(b, &mut rb);
        op_seconds += t.elapsed().as_secs_f64();
        let beta1 = weighted_norm(b, &rb, "R⁻¹");
        if !(beta1 > 0.0) || !beta1.is_finite() {
            return Err(Error::Degenerate("right-hand side b is zero".into()));
        }
        let mut u1 = b.to_vec();
        scale(1.0 / beta1, &mut u1);
        scale(1.0 / beta1, &mut rb);

        let mut this = Self {
            a,
            r,
            q,
            fact: GenGkFactorization {
                beta1,
                u: vec![u1],
                rinv_u: vec![rb],
                v: Vec::new(),
                qv: Vec::new(),
                alphas: Vec::new(),
                betas: Vec::new(),
                reorthogonalized: reorthogonalize,
                breakdown: None,
            },
            tol: 0.0,
            op_seconds,
        };
        let mut w = vec![0.0; n];
        this.timed(|s| s.a.apply_adjoint_to(&s.fact.rinv_u[0], &mut w));
        let mut qw = vec![0.0; n];
        this.timed(|s| s.q.apply_to(&w, &mut qw));
        let alpha1 = weighted_norm(&w, &qw, "Q");
        this.tol = 1e-14 * (beta1 + alpha1);
        if alpha1 <= this.tol || n == 0 {
            this.fact.alphas.push(0.0);
            this.fact.breakdown = Some(Breakdown::Alpha { k: 0 });
            return Ok(this);
        }
        scale(1.0 / alpha1, &mut w);
        scale(1.0 / alpha1, &mut qw);
        this.fact.alphas.push(alpha1);
        this.fact.v.push(w);
        this.fact.qv.push(qw);
        Ok(this)
    }

    fn timed<T>(&mut self, f: impl FnOnce(&Self) -> T) -> T {
        let t = Instant::now();
        let out = f(self);
        self.op_seconds += t.elapsed().as_secs_f64();
        out
    }

    pub fn k(&self) -> usize {
        self.fact.k()
    }

    pub fn breakdown(&self) -> Option<Breakdown> {
        self.fact.breakdown
    }

    /// Seconds spent inside operator products so far.
    pub fn op_seconds(&self) -> f64 {
        self.op_seconds
    }

    pub fn factorization(&self) -> &GenGkFactorization {
        &self.fact
    }

    pub fn into_factorization(self) -> GenGkFactorization {
        self.fact
    }

    /// One step of the recurrence. Returns `false` once the factorization
    /// has broken down and cannot grow.
    pub fn step(&mut self) -> bool {
        if self.fact.breakdown.is_some() {
            return false;
        }
        let (m, n) = (self.a.rows(), self.a.cols());
        let i = self.k();
        let alpha = self.fact.alphas[i];

        // β_{i+1} u_{i+1} = A Q v_i − α_i u_i
        let beta = if self.fact.u.len() >= m {
            0.0
        } else {
            let mut w = vec![0.0; m];
            self.timed(|s| s.a.apply_to(&s.fact.qv[i], &mut w));
            axpy(-alpha, &self.fact.u[i], &mut w);
            if self.fact.reorthogonalized {
                reorthogonalize(&mut w, &self.fact.u, &self.fact.rinv_u);
            }
            let mut rw = vec![0.0; m];
            self.timed(|s| s.r.apply_inverse_to(&w, &mut rw));
            let beta = weighted_norm(&w, &rw, "R⁻¹");
            if beta > self.tol {
                scale(1.0 / beta, &mut w);
                scale(1.0 / beta, &mut rw);
                self.fact.u.push(w);
                self.fact.rinv_u.push(rw);
            }
            beta
        };
        if beta <= self.tol {
            self.fact.betas.push(0.0);
            self.fact.alphas.push(0.0);
            self.fact.breakdown = Some(Breakdown::Beta { k: i + 1 });
            return true;
        }
        self.fact.betas.push(beta);

        // α_{i+1} v_{i+1} = Aᵀ R⁻¹ u_{i+1} − β_{i+1} v_i
        let alpha_next = if self.fact.v.len() >= n {
            0.0
        } else {
            let mut w = vec![0.0; n];
            self.timed(|s| s.a.apply_adjoint_to(&s.fact.rinv_u[i + 1], &mut w));
            axpy(-beta, &self.fact.v[i], &mut w);
            if self.fact.reorthogonalized {
                reorthogonalize(&mut w, &self.fact.v, &self.fact.qv);
            }
            let mut qw = vec![0.0; n];
            self.timed(|s| s.q.apply_to(&w, &mut qw));
            let a = weighted_norm(&w, &qw, "Q");
            if a > self.tol {
                scale(1.0 / a, &mut w);
                scale(1.0 / a, &mut qw);
                self.fact.v.push(w);
                self.fact.qv.push(qw);
            }
            a
        };
        if alpha_next <= self.tol {
            self.fact.alphas.push(0.0);
            self.fact.breakdown = Some(Breakdown::Alpha { k: i + 1 });
        } else {
            self.fact.alphas.push(alpha_next);
        }
        true
    }

    /// Take steps until `k` steps are complete or breakdown.
    pub fn run_to(&mut self, k: usize) {
        while self.k() < k && self.step() {}
    }
}

/// `√(wᵀ M w)` given `mw = M w`; a negative value from rounding is clamped
/// to zero.
fn weighted_norm(w: &[f64], mw: &[f64], what: &str) -> f64 {
    let s = dot(w, mw);
    if s < 0.0 {
        warn!("negative {what}-weighted squared norm {s:e} clamped to zero; weight may not be positive definite");
        return 0.0;
    }
    s.sqrt()
}

/// Two passes of classical Gram–Schmidt against `basis` in the inner
/// product `⟨x, y⟩ = xᵀ M y`, given the stored products `M basis_j`.
fn reorthogonalize(w: &mut [f64], basis: &[Vec<f64>], m_basis: &[Vec<f64>]) {
    if basis.is_empty() {
        return;
    }
    let mut tmp = vec![0.0; w.len()];
    for _ in 0..2 {
        let coeffs: Vec<f64> = m_basis.iter().map(|mb| dot(mb, w)).collect();
        combine(&coeffs, basis, &mut tmp);
        axpy(-1.0, &tmp, w);
    }
}

/// `gengk_init` followed by `k` steps.
pub fn bidiagonalize(
    a: &dyn LinearOperator,
    r: &NoiseCovariance,
    q: &dyn LinearOperator,
    b: &[f64],
    k: usize,
    reorthogonalize: bool,
) -> Result<GenGkFactorization> {
    let mut gk = GenGk::new(a, r, q, b, reorthogonalize)?;
    gk.run_to(k);
    Ok(gk.into_factorization())
}

#[cfg(test)]
pub(crate) mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::linop::testing::{random_dense, random_vec};
    use crate::linop::{DenseOperator, ScaledIdentityOperator};

    /// SPD matrix with eigenvalues spread log-uniformly over `[1, cond]`.
    pub fn spd_with_condition(n: usize, cond: f64, seed: u64) -> DMatrix<f64> {
        let qr = random_dense(n, n, seed).qr();
        let q = qr.q();
        let eig = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                cond.powf(i as f64 / (n.max(2) - 1) as f64)
            } else {
                0.0
            }
        });
        let m = &q * eig * q.transpose();
        (&m + m.transpose()) * 0.5
    }

    fn dense(m: DMatrix<f64>) -> DenseOperator {
        DenseOperator::new(m)
    }

    #[test]
    fn init_examples() {
        let a = ScaledIdentityOperator::identity(2);
        let r = NoiseCovariance::identity(2);
        let gk = GenGk::new(&a, &r, &a, &[3.0, 4.0], false).unwrap();
        let f = gk.factorization();
        assert!((f.beta1 - 5.0).abs() < 1e-15);
        assert!((f.u[0][0] - 0.6).abs() < 1e-15 && (f.u[0][1] - 0.8).abs() < 1e-15);
        assert!((f.alphas[0] - 1.0).abs() < 1e-15);
        assert!((f.v[0][0] - 0.6).abs() < 1e-15 && (f.v[0][1] - 0.8).abs() < 1e-15);

        let r4 = NoiseCovariance::scaled_identity(4.0, 2).unwrap();
        let f = GenGk::new(&a, &r4, &a, &[2.0, 0.0], false).unwrap();
        assert!((f.factorization().beta1 - 1.0).abs() < 1e-15);
        assert_eq!(f.factorization().u[0], vec![2.0, 0.0]);

        let a = dense(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let q = ScaledIdentityOperator::identity(2);
        let gk = GenGk::new(&a, &r, &q, &[0.0, 1.0], false).unwrap();
        assert_eq!(gk.breakdown(), Some(Breakdown::Alpha { k: 0 }));
        assert_eq!(gk.factorization().alphas[0], 0.0);

        assert!(matches!(GenGk::new(&q, &r, &q, &[0.0, 0.0], false), Err(Error::Degenerate(_))));
    }

    #[test]
    fn identity_exhausts_after_one_step() {
        let a = ScaledIdentityOperator::identity(2);
        let r = NoiseCovariance::identity(2);
        let mut gk = GenGk::new(&a, &r, &a, &[3.0, 4.0], false).unwrap();
        assert!(gk.step());
        assert_eq!(gk.breakdown(), Some(Breakdown::Beta { k: 1 }));
        assert_eq!(gk.factorization().betas, vec![0.0]);
        assert!(!gk.step());
    }

    #[test]
    fn diagonal_two_steps_relations() {
        let a = dense(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]));
        let r = NoiseCovariance::identity(2);
        let q = ScaledIdentityOperator::identity(2);
        let b = [1.0, 1.0];
        let f = bidiagonalize(&a, &r, &q, &b, 2, false).unwrap();
        assert_eq!(f.k(), 2);
        let rep = f.relation_report(&a, &b);
        assert!(rep.e_bk < 1e-14 && rep.e_vk < 1e-14 && rep.e_uk < 1e-14, "{rep:?}");
    }

    #[test]
    fn random_weighted_with_reorth_is_orthonormal() {
        let (m, n) = (20, 30);
        let a = dense(random_dense(m, n, 5));
        let r = NoiseCovariance::dense(spd_with_condition(m, 1e3, 6)).unwrap();
        let q = dense(spd_with_condition(n, 1e3, 7));
        let b = random_vec(m, 8);
        let f = bidiagonalize(&a, &r, &q, &b, 10, true).unwrap();
        let rep = f.relation_report(&a, &b);
        assert!(rep.orth_u <= 1e-10 && rep.orth_v <= 1e-10, "{rep:?}");
        assert!(rep.max_residual() <= 1e-12, "{rep:?}");
        assert!(f.alphas.iter().chain(&f.betas).all(|v| *v >= 0.0));
    }

    #[test]
    fn matches_dense_relations_exactly_computed() {
        // Build U, V, B densely and evaluate the relations with matrix algebra.
        let (m, n) = (12, 9);
        let am = random_dense(m, n, 11);
        let rm = spd_with_condition(m, 50.0, 12);
        let qm = spd_with_condition(n, 50.0, 13);
        let a = dense(am.clone());
        let r = NoiseCovariance::dense(rm.clone()).unwrap();
        let q = dense(qm.clone());
        let b = random_vec(m, 14);
        let f = bidiagonalize(&a, &r, &q, &b, 6, true).unwrap();
        let k = f.k();
        let u = DMatrix::from_fn(m, k + 1, |i, j| f.u[j][i]);
        let v = DMatrix::from_fn(n, k, |i, j| f.v[j][i]);
        let bk = f.bidiagonal().to_dense();
        let rinv = rm.clone().try_inverse().unwrap();
        let lhs = &am * &qm * &v;
        assert!((lhs - &u * &bk).abs().max() < 1e-12 * bk.abs().max());
        let g = u.transpose() * &rinv * &u;
        assert!((g - DMatrix::identity(k + 1, k + 1)).abs().max() < 1e-10);
        let g = v.transpose() * &qm * &v;
        assert!((g - DMatrix::identity(k, k)).abs().max() < 1e-10);
    }

    #[test]
    fn reduces_to_standard_golub_kahan() {
        // Plain Golub–Kahan, written independently.
        fn plain_gk(a: &DMatrix<f64>, b: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
            let bv = nalgebra::DVector::from_column_slice(b);
            let beta1 = bv.norm();
            let mut u = bv / beta1;
            let mut v = a.transpose() * &u;
            let mut alpha = v.norm();
            v /= alpha;
            let (mut al, mut be) = (vec![alpha], vec![]);
            for _ in 0..k {
                let mut un = a * &v - &u * alpha;
                let beta = un.norm();
                un /= beta;
                let mut vn = a.transpose() * &un - &v * beta;
                alpha = vn.norm();
                vn /= alpha;
                be.push(beta);
                al.push(alpha);
                u = un;
                v = vn;
            }
            (al, be)
        }
        let am = random_dense(25, 15, 21);
        let b = random_vec(25, 22);
        let (al, be) = plain_gk(&am, &b, 6);
        let a = dense(am);
        let r = NoiseCovariance::identity(25);
        let q = ScaledIdentityOperator::identity(15);
        let f = bidiagonalize(&a, &r, &q, &b, 6, false).unwrap();
        for i in 0..6 {
            assert!((f.alphas[i] - al[i]).abs() < 1e-12);
            assert!((f.betas[i] - be[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn without_reorth_recurrences_still_hold() {
        let (m, n) = (60, 80);
        let a = dense(random_dense(m, n, 31));
        let r = NoiseCovariance::dense(spd_with_condition(m, 1e4, 32)).unwrap();
        let q = dense(spd_with_condition(n, 1e4, 33));
        let b = random_vec(m, 34);
        let f = bidiagonalize(&a, &r, &q, &b, 40, false).unwrap();
        let rep = f.relation_report(&a, &b);
        assert!(rep.e_bk <= 1e-10 && rep.e_vk <= 1e-10 && rep.e_uk <= 1e-10, "{rep:?}");
    }

    #[test]
    fn runs_to_dimension_guard_breakdown() {
        let (m, n) = (8, 5);
        let a = dense(random_dense(m, n, 41));
        let r = NoiseCovariance::identity(m);
        let q = dense(spd_with_condition(n, 10.0, 42));
        let b = random_vec(m, 43);
        let f = bidiagonalize(&a, &r, &q, &b, 100, true).unwrap();
        assert_eq!(f.k(), n);
        assert_eq!(f.breakdown, Some(Breakdown::Alpha { k: n }));
        let rep = f.relation_report(&a, &b);
        assert!(rep.max_residual() < 1e-12, "{rep:?}");
    }

    #[test]
    fn k0_report_and_breakdown_report() {
        let a = dense(random_dense(6, 4, 51));
        let r = NoiseCovariance::identity(6);
        let q = ScaledIdentityOperator::identity(4);
        let b = random_vec(6, 52);
        let f = bidiagonalize(&a, &r, &q, &b, 0, false).unwrap();
        let rep = f.relation_report(&a, &b);
        assert_eq!(rep.k, 0);
        assert!(rep.e_bk < 1e-15);

        let id = ScaledIdentityOperator::identity(2);
        let r2 = NoiseCovariance::identity(2);
        let b = [3.0, 4.0];
        let f = bidiagonalize(&id, &r2, &id, &b, 5, false).unwrap();
        assert_eq!(f.k(), 1);
        assert!(f.relation_report(&id, &b).max_residual() < 1e-14);
    }

    #[test]
    fn diagnostics_csv() {
        let a: Arc<dyn LinearOperator> = Arc::new(dense(random_dense(10, 7, 61)));
        let r = NoiseCovariance::identity(10);
        let q = ScaledIdentityOperator::identity(7);
        let f = bidiagonalize(a.as_ref(), &r, &q, &random_vec(10, 62), 4, true).unwrap();
        let rows = f.diagnostics(a.as_ref());
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|d| d.orth_u < 1e-12 && d.rec_resid < 1e-12));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gk.csv");
        write_diagnostics_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert!(text.starts_with("iter,alpha,beta,orth_U,orth_V,rec_resid\n1,"));
        assert_eq!(text.lines().count(), 5);
    }
}
