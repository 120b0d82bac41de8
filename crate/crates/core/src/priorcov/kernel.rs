use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::bessel::ln_bessel_k;
use crate::error::{Error, Result};

/// Largest `p` for which `ν = p + 1/2` uses the closed form.
const HALF_INTEGER_CUTOFF: u32 = 50;

/// Matérn correlation
/// `C_{ν,ℓ}(r) = 2^{1-ν}/Γ(ν) · x^ν K_ν(x)`, `x = √(2ν) r/ℓ`.
///
/// `nu = f64::INFINITY` gives the Gaussian limit `exp(-r²/(2ℓ²))`, which is
/// also used for every finite `ν` above `gaussian_threshold`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaternKernel {
    nu: f64,
    ell: f64,
    gaussian_threshold: f64,
}

impl MaternKernel {
    pub fn new(nu: f64, ell: f64) -> Result<Self> {
        if !(nu > 0.0) || nu.is_nan() {
            return Err(Error::param(format!("Matérn smoothness must be positive, got {nu}")));
        }
        if !(ell > 0.0 && ell.is_finite()) {
            return Err(Error::param(format!("length scale must be positive, got {ell}")));
        }
        Ok(Self {
            nu,
            ell,
            gaussian_threshold: 1e4,
        })
    }

    pub fn gaussian(ell: f64) -> Result<Self> {
        Self::new(f64::INFINITY, ell)
    }

    pub fn exponential(ell: f64) -> Result<Self> {
        Self::new(0.5, ell)
    }

    pub fn with_gaussian_threshold(mut self, threshold: f64) -> Self {
        self.gaussian_threshold = threshold;
        self
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn eval(&self, r: f64) -> f64 {
        debug_assert!(r >= 0.0);
        if r == 0.0 {
            return 1.0;
        }
        if self.nu > self.gaussian_threshold {
            let u = r / self.ell;
            return (-0.5 * u * u).exp();
        }
        let x = (2.0 * self.nu).sqrt() * r / self.ell;
        let p = self.nu - 0.5;
        if p >= 0.0 && p.fract() == 0.0 && p <= HALF_INTEGER_CUTOFF as f64 {
            return matern_half_integer(p as u32, x);
        }
        let ln_c = self.nu * x.ln() + ln_bessel_k(self.nu, x)
            - (self.nu - 1.0) * std::f64::consts::LN_2
            - ln_gamma(self.nu);
        ln_c.exp().min(1.0)
    }
}

/// `ν = p + 1/2`:
/// `C = e^{-x} p!/(2p)! Σ_{i=0}^{p} (p+i)!/(i!(p-i)!) (2x)^{p-i}`.
fn matern_half_integer(p: u32, x: f64) -> f64 {
    match p {
        0 => (-x).exp(),
        1 => (1.0 + x) * (-x).exp(),
        2 => (1.0 + x + x * x / 3.0) * (-x).exp(),
        _ => {
            use statrs::function::factorial::ln_factorial;
            let p64 = p as u64;
            let base = ln_factorial(p64) - ln_factorial(2 * p64);
            let ln2x = (2.0 * x).ln();
            let sum: f64 = (0..=p64)
                .map(|i| {
                    let ln_t = base + ln_factorial(p64 + i)
                        - ln_factorial(i)
                        - ln_factorial(p64 - i)
                        + (p64 - i) as f64 * ln2x
                        - x;
                    ln_t.exp()
                })
                .sum();
            sum.min(1.0)
        }
    }
}

/// `κ(r) = exp(-(r/ℓ)^γ)`, `0 < γ ≤ 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaExpKernel {
    gamma: f64,
    ell: f64,
}

impl GammaExpKernel {
    pub fn new(gamma: f64, ell: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 2.0) {
            return Err(Error::param(format!("γ-exponential exponent must lie in (0, 2], got {gamma}")));
        }
        if !(ell > 0.0 && ell.is_finite()) {
            return Err(Error::param(format!("length scale must be positive, got {ell}")));
        }
        Ok(Self { gamma, ell })
    }

    pub fn eval(&self, r: f64) -> f64 {
        (-(r / self.ell).powf(self.gamma)).exp()
    }
}

/// An isotropic correlation function of distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    Matern(MaternKernel),
    GammaExp(GammaExpKernel),
}

impl Kernel {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            Kernel::Matern(k) => k.eval(r),
            Kernel::GammaExp(k) => k.eval(r),
        }
    }
}

impl From<MaternKernel> for Kernel {
    fn from(k: MaternKernel) -> Self {
        Kernel::Matern(k)
    }
}

impl From<GammaExpKernel> for Kernel {
    fn from(k: GammaExpKernel) -> Self {
        Kernel::GammaExp(k)
    }
}

/// `φ(√(c1 ‖p₁ - p₂‖² + c2 |t₁ - t₂|²))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonseparableKernel {
    pub base: Kernel,
    pub c1: f64,
    pub c2: f64,
}

impl NonseparableKernel {
    pub fn new(base: Kernel, c1: f64, c2: f64) -> Result<Self> {
        if !(c1 >= 0.0 && c2 >= 0.0) {
            return Err(Error::param("space-time weights must be nonnegative"));
        }
        Ok(Self { base, c1, c2 })
    }

    /// Evaluate from squared spatial distance and temporal lag.
    pub fn eval(&self, space_dist2: f64, time_lag: f64) -> f64 {
        self.base
            .eval((self.c1 * space_dist2 + self.c2 * time_lag * time_lag).sqrt())
    }
}

pub fn matern_eval(kernel: &MaternKernel, r: f64) -> Result<f64> {
    check_distance(r)?;
    Ok(kernel.eval(r))
}

pub fn gamma_exp_eval(kernel: &GammaExpKernel, r: f64) -> Result<f64> {
    check_distance(r)?;
    Ok(kernel.eval(r))
}

fn check_distance(r: f64) -> Result<()> {
    if !(r >= 0.0) {
        return Err(Error::param(format!("distance must be nonnegative, got {r}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matern(nu: f64, ell: f64) -> MaternKernel {
        MaternKernel::new(nu, ell).unwrap()
    }

    #[test]
    fn exponential_and_three_halves() {
        assert!((matern(0.5, 1.0).eval(1.0) - (-1.0f64).exp()).abs() < 1e-15);
        let s3 = 3f64.sqrt();
        let want = (1.0 + s3) * (-s3).exp();
        assert!((matern(1.5, 1.0).eval(1.0) - want).abs() < 1e-15);
        assert!((want - 0.483_357_7).abs() < 1e-7);
        for nu in [0.3, 0.5, 1.0, 2.5, 7.2, f64::INFINITY] {
            assert_eq!(matern(nu, 0.7).eval(0.0), 1.0);
        }
    }

    #[test]
    fn general_order_reference_values() {
        // High-precision reference values of 2^{1-ν}/Γ(ν) x^ν K_ν(x).
        let cases = [
            (1.0, 1.0, 0.5, 0.731_914_476_461_462_8),
            (2.0, 0.3, 0.2, 0.708_935_064_951_825),
            (10.5, 1.0, 1.0, 0.584_965_100_833_192_1),
            (0.25, 2.0, 3.0, 0.185_861_097_053_419_45),
            (1.0, 0.01, 0.005, 0.731_914_476_461_462_8),
            (3.7, 1.0, 2.0, 0.137_641_419_000_132_6),
        ];
        for (nu, ell, r, want) in cases {
            let got = matern(nu, ell).eval(r);
            assert!((got - want).abs() < 1e-11 * want, "ν={nu}: {got} vs {want}");
        }
    }

    #[test]
    fn half_integer_closed_form_matches_bessel_path() {
        for p in 3..=12u32 {
            let nu = p as f64 + 0.5;
            let k = matern(nu, 1.3);
            for &r in &[0.05, 0.4, 1.0, 2.2] {
                let x = (2.0 * nu).sqrt() * r / 1.3;
                let via_bessel = (nu * x.ln() + ln_bessel_k(nu, x)
                    - (nu - 1.0) * std::f64::consts::LN_2
                    - ln_gamma(nu))
                .exp();
                assert!((k.eval(r) - via_bessel).abs() < 1e-10, "p={p} r={r}");
            }
        }
    }

    #[test]
    fn large_nu_approaches_gaussian() {
        let k = matern(100.0, 1.0);
        for i in 0..=30 {
            let r = 0.1 * i as f64;
            assert!((k.eval(r) - (-0.5 * r * r).exp()).abs() <= 1e-2);
        }
        let g = matern(2e4, 1.0);
        assert_eq!(g.eval(1.0), (-0.5f64).exp());
    }

    #[test]
    fn gamma_exponential() {
        let k = GammaExpKernel::new(2.0, 1.0).unwrap();
        assert!((k.eval(1.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(GammaExpKernel::new(1.0, 2.0).unwrap().eval(0.0), 1.0);
        let k = GammaExpKernel::new(1.0, 0.5).unwrap();
        assert!((k.eval(1.0) - 0.135_335_3).abs() < 1e-7);
        assert!(GammaExpKernel::new(2.5, 1.0).is_err());
        assert!(GammaExpKernel::new(0.0, 1.0).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(MaternKernel::new(0.0, 1.0).is_err());
        assert!(MaternKernel::new(1.0, -1.0).is_err());
        assert!(MaternKernel::new(f64::NAN, 1.0).is_err());
        assert!(matern_eval(&matern(1.0, 1.0), -0.1).is_err());
    }

    #[test]
    fn nonseparable_weights() {
        let base = Kernel::from(matern(0.5, 2.0));
        let k = NonseparableKernel::new(base, 1.0, 0.25).unwrap();
        let want = (-(3.0f64 + 0.25 * 4.0).sqrt() / 2.0).exp();
        assert!((k.eval(3.0, 2.0) - want).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn strictly_decreasing(nu in 0.1f64..30.0, ell in 0.1f64..3.0, gamma in 0.1f64..2.0) {
                let m = matern(nu, ell);
                let g = GammaExpKernel::new(gamma, ell).unwrap();
                let mut prev = (1.0 + 1e-12, 1.0 + 1e-12);
                for i in 0..40 {
                    let r = 0.05 * ell * i as f64;
                    let cur = (m.eval(r), g.eval(r));
                    prop_assert!(cur.0 < prev.0 && cur.0 > 0.0, "Matérn ν={} r={}", nu, r);
                    prop_assert!(cur.1 < prev.1 && cur.1 > 0.0);
                    prev = cur;
                }
            }
        }
    }
}
