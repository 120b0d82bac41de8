//! The projected problem `min ‖B_k z − β₁e₁‖² + λ²‖z‖²` and the parameter
//! choice rules evaluated on it.

use nalgebra::{DMatrix, SVD};

use crate::error::{Error, Result};
use crate::gengk::Bidiagonal;

/// SVD of the `(k+1) x k` bidiagonal, in the form the GCV functions need.
#[derive(Clone, Debug)]
pub struct ProjectedSvd {
    /// Singular values, descending.
    pub s: Vec<f64>,
    /// `c_i = (left singular vector i)ᵀ e₁`.
    pub c: Vec<f64>,
    /// Squared norm of the part of `e₁` orthogonal to `range(B_k)`.
    pub c_perp2: f64,
    /// Right singular vectors as columns, `k x k`.
    pub v: DMatrix<f64>,
}

impl ProjectedSvd {
    pub fn new(b: &Bidiagonal) -> Self {
        let k = b.k();
        if k == 0 {
            return Self {
                s: Vec::new(),
                c: Vec::new(),
                c_perp2: 1.0,
                v: DMatrix::zeros(0, 0),
            };
        }
        let svd = SVD::new(b.to_dense(), true, true);
        let u = svd.u.expect("left singular vectors requested");
        let vt = svd.v_t.expect("right singular vectors requested");
        Self {
            s: svd.singular_values.iter().copied().collect(),
            c: u.row(0).iter().copied().collect(),
            c_perp2: left_null_first_component2(b),
            v: vt.transpose(),
        }
    }

    pub fn k(&self) -> usize {
        self.s.len()
    }

    pub fn s_max(&self) -> f64 {
        self.s.first().copied().unwrap_or(0.0)
    }

    /// `z(λ) = V diag(s/(s²+λ²)) β₁ c`; zero singular values contribute
    /// nothing (minimum-norm solution at `λ = 0`).
    pub fn solve(&self, beta1: f64, lambda: f64) -> Vec<f64> {
        let l2 = lambda * lambda;
        let w: Vec<f64> = self
            .s
            .iter()
            .zip(&self.c)
            .map(|(&s, &c)| {
                let den = s * s + l2;
                if den > 0.0 {
                    s / den * beta1 * c
                } else {
                    0.0
                }
            })
            .collect();
        (0..self.k())
            .map(|i| (0..self.k()).map(|j| self.v[(i, j)] * w[j]).sum())
            .collect()
    }

    /// `s²/(s²+λ²)` with the convention `0/0 = 0`.
    fn filter(s: f64, lambda: f64) -> f64 {
        let s2 = s * s;
        let den = s2 + lambda * lambda;
        if den > 0.0 {
            s2 / den
        } else {
            0.0
        }
    }

    /// `‖B_k z(λ) − β₁e₁‖²`.
    pub fn residual2(&self, beta1: f64, lambda: f64) -> f64 {
        let sum: f64 = self
            .s
            .iter()
            .zip(&self.c)
            .map(|(&s, &c)| {
                let g = 1.0 - Self::filter(s, lambda);
                g * g * c * c
            })
            .sum();
        beta1 * beta1 * (sum + self.c_perp2)
    }

    /// `trace(I_{k+1} − w B_k B_{k,λ}†)`.
    pub fn trace_term(&self, lambda: f64, w: f64) -> f64 {
        (self.k() + 1) as f64 - w * self.s.iter().map(|&s| Self::filter(s, lambda)).sum::<f64>()
    }
}

/// `y₁²/‖y‖²` for the left null vector `y` of `B_k` (`B_kᵀ y = 0`).
///
/// `α_i y_i + β_{i+1} y_{i+1} = 0` fixes `y` up to scale; rescaling as we go
/// keeps the recurrence finite.
fn left_null_first_component2(b: &Bidiagonal) -> f64 {
    let k = b.k();
    let mut y_prev = 1.0f64;
    let mut y1 = 1.0f64;
    let mut norm2 = 1.0f64;
    for i in 0..k {
        if b.betas[i] == 0.0 {
            // e₁ lies in range(B_k) once a β vanishes below a nonzero α chain.
            return 0.0;
        }
        let y = -b.alphas[i] * y_prev / b.betas[i];
        norm2 += y * y;
        y_prev = y;
        if norm2 > 1e200 {
            let f = 1e-100;
            y1 *= f;
            y_prev *= f;
            norm2 *= f * f;
        }
    }
    y1 * y1 / norm2
}

/// Projected GCV, `k ‖(I − B_k B_{k,λ}†) β₁e₁‖² / trace(I − B_k B_{k,λ}†)²`.
pub fn gcv_projected(svd: &ProjectedSvd, beta1: f64, lambda: f64) -> f64 {
    wgcv_unchecked(svd, beta1, lambda, 1.0)
}

/// Weighted GCV: the trace term becomes `trace(I − w B_k B_{k,λ}†)`.
pub fn wgcv_projected(svd: &ProjectedSvd, beta1: f64, lambda: f64, w: f64) -> Result<f64> {
    if !(w > 0.0 && w <= 1.0) {
        return Err(Error::param(format!("WGCV weight must lie in (0, 1], got {w}")));
    }
    Ok(wgcv_unchecked(svd, beta1, lambda, w))
}

fn wgcv_unchecked(svd: &ProjectedSvd, beta1: f64, lambda: f64, w: f64) -> f64 {
    let t = svd.trace_term(lambda, w);
    svd.k() as f64 * svd.residual2(beta1, lambda) / (t * t)
}

/// Solve the projected Tikhonov problem through its SVD. The flag is set
/// when `λ = 0` and `B_k` is rank deficient, so the minimum-norm solution
/// was returned.
pub fn solve_projected_tikhonov(b: &Bidiagonal, beta1: f64, lambda: f64) -> Result<(Vec<f64>, bool)> {
    if !(lambda >= 0.0) {
        return Err(Error::param(format!("λ must be nonnegative, got {lambda}")));
    }
    if b.k() == 0 {
        return Err(Error::param("projected problem needs k ≥ 1"));
    }
    let svd = ProjectedSvd::new(b);
    let rank_deficient = lambda == 0.0 && svd.s.last().is_some_and(|&s| s <= 1e-14 * svd.s_max());
    Ok((svd.solve(beta1, lambda), rank_deficient))
}

/// Projected Tikhonov solution by Givens QR of `[B_k; λI]` in O(k).
///
/// The elimination order is the one used by damped LSQR: the `λ` entry of
/// each column is rotated into the diagonal first, then the subdiagonal
/// `β`. Returns `None` if the triangular factor is singular.
pub fn solve_projected_givens(b: &Bidiagonal, beta1: f64, lambda: f64) -> Option<Vec<f64>> {
    let k = b.k();
    let mut rho = Vec::with_capacity(k);
    let mut theta = Vec::with_capacity(k);
    let mut phi = Vec::with_capacity(k);
    let mut rhobar = b.alphas.first().copied().unwrap_or(0.0);
    let mut phibar = beta1;
    for i in 0..k {
        let rhobar1 = rhobar.hypot(lambda);
        let (c1, _s1) = if rhobar1 > 0.0 {
            (rhobar / rhobar1, lambda / rhobar1)
        } else {
            (1.0, 0.0)
        };
        phibar *= c1;
        let beta = b.betas[i];
        let r = rhobar1.hypot(beta);
        if r == 0.0 {
            return None;
        }
        let (c, s) = (rhobar1 / r, beta / r);
        let alpha_next = b.alphas.get(i + 1).copied().unwrap_or(0.0);
        theta.push(s * alpha_next);
        rhobar = -c * alpha_next;
        rho.push(r);
        phi.push(c * phibar);
        phibar *= s;
    }
    let mut z = vec![0.0; k];
    for i in (0..k).rev() {
        let next = if i + 1 < k { theta[i] * z[i + 1] } else { 0.0 };
        z[i] = (phi[i] - next) / rho[i];
    }
    Some(z)
}

/// `‖B_k z − β₁e₁‖` without forming `B_k`.
pub fn projected_residual(b: &Bidiagonal, beta1: f64, z: &[f64]) -> f64 {
    let k = b.k();
    let mut acc = 0.0;
    for row in 0..=k {
        let mut v = if row == 0 { -beta1 } else { 0.0 };
        if row < k {
            v += b.alphas[row] * z[row];
        }
        if row >= 1 {
            v += b.betas[row - 1] * z[row - 1];
        }
        acc += v * v;
    }
    acc.sqrt()
}

/// Grid used by the λ search: 200 points, log-spaced over
/// `[1e-12 s_max, 1e3 s_max]`.
pub fn lambda_grid(s_max: f64, points: usize) -> Vec<f64> {
    let s_max = if s_max > 0.0 { s_max } else { 1.0 };
    let (lo, hi) = ((1e-12 * s_max).ln(), (1e3 * s_max).ln());
    (0..points)
        .map(|i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

pub const GRID_POINTS: usize = 200;

/// Minimize `f` over `λ`: scan the log grid, then golden-section search in
/// `ln λ` between the neighbours of the best grid point. Ties go to the
/// smallest `λ`.
pub fn minimize_log_grid(s_max: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let grid = lambda_grid(s_max, GRID_POINTS);
    let vals: Vec<f64> = grid.iter().map(|&l| f(l)).collect();
    let mut best = 0;
    for (i, v) in vals.iter().enumerate() {
        if *v < vals[best] {
            best = i;
        }
    }
    let lo = grid[best.saturating_sub(1)].ln();
    let hi = grid[(best + 1).min(grid.len() - 1)].ln();
    let (x, fx) = golden_section(lo, hi, |t| f(t.exp()));
    if fx < vals[best] {
        (x.exp(), fx)
    } else {
        (grid[best], vals[best])
    }
}

fn golden_section(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if (b - a).abs() < 1e-10 {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Adaptive WGCV weight from one projected SVD, following the rule used by
/// the HyBR codes: with `α` the smallest singular value,
/// `ω = m α² Σ c_i² s_i² τ_i³ / (t₁ t₃ + t₄ (t₅ + t₀))`, `τ_i = 1/(s_i² + α²)`.
pub fn adaptive_weight(svd: &ProjectedSvd, beta1: f64) -> f64 {
    let k = svd.k();
    if k == 0 {
        return 1.0;
    }
    let m = (k + 1) as f64;
    let alpha = svd.s[k - 1];
    let a2 = alpha * alpha;
    let bhat: Vec<f64> = svd.c.iter().map(|c| beta1 * c).collect();
    let t0 = beta1 * beta1 * svd.c_perp2;
    let (mut t1, mut t3, mut t4, mut t5, mut v2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..k {
        let s = svd.s[i];
        let s2 = s * s;
        let tt = 1.0 / (s2 + a2);
        if !tt.is_finite() {
            continue;
        }
        t1 += s2 * tt;
        t3 += (bhat[i] * alpha * s).powi(2) * tt.powi(3);
        t4 += (s * tt).powi(2);
        t5 += (a2 * bhat[i] * tt).powi(2);
        v2 += (bhat[i] * s).powi(2) * tt.powi(3);
    }
    let den = t1 * t3 + t4 * (t5 + t0);
    let omega = m * a2 * v2 / den;
    if omega.is_finite() && omega > 0.0 {
        omega.min(1.0)
    } else {
        1.0
    }
}
