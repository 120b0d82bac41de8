use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{add_noise, forward_operator, rng, sigma_for_level, ForwardModel, GeneratorParams, Grid, ProblemInstance};
use crate::error::{Error, Result};
use crate::linop::SparseOperator;

/// Dynamic deblurring. The spatial spread is in normalized coordinates
/// (pixel size `1/nx`), the temporal spread in frames. Bandwidth `b` keeps
/// offsets `|i − j| < b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeblurParams {
    pub nx: usize,
    pub ny: usize,
    pub n_t: usize,
    pub spatial_sigma: f64,
    pub spatial_bandwidth: usize,
    pub temporal_sigma: f64,
    pub temporal_bandwidth: usize,
    pub noise_level: f64,
}

impl Default for DeblurParams {
    fn default() -> Self {
        Self {
            nx: 50,
            ny: 50,
            n_t: 9,
            spatial_sigma: 0.07,
            spatial_bandwidth: 3,
            temporal_sigma: 1.0,
            temporal_bandwidth: 3,
            noise_level: 0.02,
        }
    }
}

/// Banded Toeplitz Gaussian blur of size `n`, with sample spacing `h`,
/// scaled so the weights of a full row sum to one.
pub fn blur_1d(n: usize, sigma: f64, bandwidth: usize, h: f64) -> Result<SparseOperator> {
    if n == 0 {
        return Err(Error::param("blur dimension must be positive"));
    }
    if bandwidth == 0 || bandwidth > n {
        return Err(Error::param(format!("blur bandwidth {bandwidth} invalid for dimension {n}")));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::param(format!("blur spread must be positive, got {sigma}")));
    }
    let w: Vec<f64> = (0..bandwidth)
        .map(|k| (-((k as f64 * h).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total = w[0] + 2.0 * w[1..].iter().sum::<f64>();
    let mut trip = Vec::new();
    for i in 0..n {
        let lo = i.saturating_sub(bandwidth - 1);
        let hi = (i + bandwidth).min(n);
        for j in lo..hi {
            trip.push((i, j, w[i.abs_diff(j)] / total));
        }
    }
    SparseOperator::from_triplets(n, n, &trip)
}

/// Truth sequence: a fixed rectangle plus a Gaussian blob moving across
/// the image. Returned as `vec(S)` with `S` of size `(nx·ny) x n_t`.
pub fn deblur_truth(nx: usize, ny: usize, n_t: usize) -> Vec<f64> {
    let mut s = Vec::with_capacity(nx * ny * n_t);
    for t in 0..n_t {
        let tau = if n_t > 1 { t as f64 / (n_t - 1) as f64 } else { 0.5 };
        let (cx, cy) = (0.25 + 0.5 * tau, 0.3 + 0.25 * tau);
        for iy in 0..ny {
            let y = (iy as f64 + 0.5) / ny as f64;
            for ix in 0..nx {
                let x = (ix as f64 + 0.5) / nx as f64;
                let mut v = 0.0;
                if (0.55..0.85).contains(&x) && (0.6..0.8).contains(&y) {
                    v += 0.5;
                }
                let r2 = (x - cx).powi(2) + (y - cy).powi(2);
                v += (-r2 / (2.0 * 0.08f64.powi(2))).exp();
                s.push(v);
            }
        }
    }
    s
}

pub fn gen_dynamic_deblur(p: &DeblurParams, seed: u64) -> Result<ProblemInstance> {
    if p.nx == 0 || p.ny == 0 || p.n_t == 0 {
        return Err(Error::param("deblur dimensions must be positive"));
    }
    for (b, n, what) in [(p.spatial_bandwidth, p.nx, "nx"), (p.spatial_bandwidth, p.ny, "ny")] {
        if b == 0 || b >= n {
            return Err(Error::param(format!("spatial bandwidth {b} must be in [1, {what})")));
        }
    }
    if !(p.noise_level >= 0.0 && p.noise_level.is_finite()) {
        return Err(Error::param("noise level must be nonnegative"));
    }
    let h = 1.0 / p.nx as f64;
    let a_x = blur_1d(p.nx, p.spatial_sigma, p.spatial_bandwidth, h)?;
    let a_y = blur_1d(p.ny, p.spatial_sigma, p.spatial_bandwidth, 1.0 / p.ny as f64)?;
    let a_t = if p.n_t == 1 {
        DMatrix::identity(1, 1)
    } else {
        let b = p.temporal_bandwidth;
        if b == 0 || b >= p.n_t {
            return Err(Error::param(format!("temporal bandwidth {b} must be in [1, n_t)")));
        }
        let t = blur_1d(p.n_t, p.temporal_sigma, b, 1.0)?;
        crate::linop::to_dense(&t, Default::default())?
    };
    let grid = Grid {
        nx: p.nx,
        ny: p.ny,
        n_t: p.n_t,
        spacing: h,
    };
    let forward = ForwardModel::Kronecker { a_t, a_x, a_y };
    let a = forward_operator(&forward, &grid)?;
    let truth = deblur_truth(p.nx, p.ny, p.n_t);
    let clean = a.apply(&truth)?;
    let sigma = sigma_for_level(p.noise_level, &clean);
    let (d, noise_variance) = add_noise(clean, sigma, &mut rng(seed));
    Ok(ProblemInstance {
        params: GeneratorParams::Deblur(p.clone()),
        grid,
        forward,
        a,
        noise_variance,
        d,
        truth: Some(truth),
        mask: None,
        prior_mean_hint: None,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::{to_dense, DenseBudget};

    #[test]
    fn blur_rows() {
        let b = to_dense(&blur_1d(7, 1.0, 3, 1.0).unwrap(), DenseBudget::default()).unwrap();
        let s: f64 = b.row(3).iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(b[(3, 0)], 0.0);
        assert!(b[(3, 1)] > 0.0);
        assert!((b[(3, 2)] / b[(3, 3)] - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(b, b.transpose());
    }

    #[test]
    fn degenerate_bandwidth() {
        assert!(blur_1d(5, 1.0, 0, 1.0).is_err());
        let p = DeblurParams {
            spatial_bandwidth: 0,
            ..DeblurParams::default()
        };
        assert!(gen_dynamic_deblur(&p, 0).is_err());
        let p = DeblurParams {
            nx: 8,
            ny: 8,
            n_t: 3,
            temporal_bandwidth: 3,
            ..DeblurParams::default()
        };
        assert!(gen_dynamic_deblur(&p, 0).is_err());
    }

    #[test]
    fn noise_free_data() {
        let p = DeblurParams {
            nx: 10,
            ny: 9,
            n_t: 5,
            noise_level: 0.0,
            ..DeblurParams::default()
        };
        let inst = gen_dynamic_deblur(&p, 4).unwrap();
        assert_eq!(inst.noise_variance, 0.0);
        assert_eq!(inst.d, inst.a.apply(inst.truth.as_ref().unwrap()).unwrap());
    }

    #[test]
    fn single_frame_is_static() {
        let p = DeblurParams {
            nx: 10,
            ny: 8,
            n_t: 1,
            noise_level: 0.0,
            ..DeblurParams::default()
        };
        let inst = gen_dynamic_deblur(&p, 0).unwrap();
        let parts = inst.kronecker_parts().unwrap();
        assert_eq!(parts.a_t, DMatrix::identity(1, 1));
        let x = inst.truth.clone().unwrap();
        assert_eq!(inst.a.apply(&x).unwrap(), parts.a_s.apply(&x).unwrap());
    }

    #[test]
    fn default_configuration_shapes() {
        let inst = gen_dynamic_deblur(&DeblurParams::default(), 0).unwrap();
        assert_eq!((inst.m(), inst.n()), (22_500, 22_500));
        let sigma = inst.noise_variance.sqrt();
        let clean = inst.a.apply(inst.truth.as_ref().unwrap()).unwrap();
        let expect = 0.02 * crate::vecops::norm2(&clean) / 150.0;
        assert!((sigma - expect).abs() < 1e-15 * expect);
    }
}
