use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::siddon::siddon;
use super::{add_noise, forward_operator, rng, ForwardModel, GeneratorParams, Grid, ProblemInstance};
use crate::error::{Error, Result};
use crate::linop::SparseOperator;

const MAX_RESAMPLES: usize = 100;

/// Straight-ray travel-time tomography on unit pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RayParams {
    pub nx: usize,
    pub ny: usize,
    pub n_t: usize,
    /// Rays per frame; a single entry applies to every frame.
    pub rays_per_time: Vec<usize>,
    pub noise_sigma: f64,
    /// Background slowness `v`; the checkerboard cells hold `v/1.1` and `v/0.9`.
    pub background: f64,
    /// Checkerboard cell size in pixels.
    pub cell: usize,
    /// Horizontal shift of the pattern per frame, in pixels.
    pub shift_per_step: usize,
    /// Minimum number of rays crossing a pixel for it to count as observed.
    pub coverage_threshold: usize,
}

impl Default for RayParams {
    fn default() -> Self {
        Self {
            nx: 32,
            ny: 32,
            n_t: 8,
            rays_per_time: vec![200],
            noise_sigma: 0.0,
            background: 5e-5,
            cell: 4,
            shift_per_step: 1,
            coverage_threshold: 1,
        }
    }
}

/// Value of the checkerboard at pixel `(ix, iy)` in frame `t`.
pub fn checkerboard_value(p: &RayParams, ix: usize, iy: usize, t: usize) -> f64 {
    let cx = (ix + t * p.shift_per_step) / p.cell;
    let cy = iy / p.cell;
    if (cx + cy) % 2 == 0 {
        p.background / 1.1
    } else {
        p.background / 0.9
    }
}

fn boundary_point(u: f64, nx: f64, ny: f64) -> ([f64; 2], usize) {
    let per = 2.0 * (nx + ny);
    let s = u * per;
    if s < nx {
        ([s, 0.0], 0)
    } else if s < nx + ny {
        ([nx, s - nx], 1)
    } else if s < 2.0 * nx + ny {
        ([2.0 * nx + ny - s, ny], 2)
    } else {
        ([0.0, per - s], 3)
    }
}

fn random_ray(nx: usize, ny: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, f64)>> {
    let (fx, fy) = (nx as f64, ny as f64);
    for _ in 0..MAX_RESAMPLES {
        let (p0, e0) = boundary_point(rng.random::<f64>(), fx, fy);
        let (p1, e1) = boundary_point(rng.random::<f64>(), fx, fy);
        if e0 == e1 {
            continue;
        }
        let hits = siddon(nx, ny, p0, p1);
        if hits.iter().map(|h| h.1).sum::<f64>() > 0.0 {
            return Ok(hits);
        }
    }
    Err(Error::Generation(format!(
        "no valid ray after {MAX_RESAMPLES} resamples"
    )))
}

pub fn gen_ray_tomography(p: &RayParams, seed: u64) -> Result<ProblemInstance> {
    if p.nx == 0 || p.ny == 0 || p.n_t == 0 {
        return Err(Error::param("ray tomography dimensions must be positive"));
    }
    if p.cell == 0 {
        return Err(Error::param("checkerboard cell size must be positive"));
    }
    let counts: Vec<usize> = match p.rays_per_time.len() {
        1 => vec![p.rays_per_time[0]; p.n_t],
        k if k == p.n_t => p.rays_per_time.clone(),
        k => {
            return Err(Error::param(format!(
                "rays_per_time has {k} entries for {} frames",
                p.n_t
            )))
        }
    };
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::param("every frame needs at least one ray"));
    }
    if !(p.noise_sigma >= 0.0 && p.noise_sigma.is_finite()) {
        return Err(Error::param("noise_sigma must be nonnegative"));
    }
    let n_s = p.nx * p.ny;
    let mut r = rng(seed);
    let mut blocks = Vec::with_capacity(p.n_t);
    let mut mask = Vec::with_capacity(n_s * p.n_t);
    for &count in &counts {
        let mut trip = Vec::new();
        let mut hits = vec![0usize; n_s];
        for row in 0..count {
            for (j, len) in random_ray(p.nx, p.ny, &mut r)? {
                trip.push((row, j, len));
                hits[j] += 1;
            }
        }
        mask.extend(hits.iter().map(|&h| h >= p.coverage_threshold.max(1)));
        blocks.push(SparseOperator::from_triplets(count, n_s, &trip)?);
    }
    let mut truth = Vec::with_capacity(n_s * p.n_t);
    for t in 0..p.n_t {
        for iy in 0..p.ny {
            for ix in 0..p.nx {
                let k = t * n_s + ix + p.nx * iy;
                truth.push(if mask[k] { checkerboard_value(p, ix, iy, t) } else { p.background });
            }
        }
    }
    let grid = Grid {
        nx: p.nx,
        ny: p.ny,
        n_t: p.n_t,
        spacing: 1.0,
    };
    let forward = ForwardModel::BlockDiag { blocks };
    let a = forward_operator(&forward, &grid)?;
    let clean = a.apply(&truth)?;
    let (d, noise_variance) = add_noise(clean, p.noise_sigma, &mut r);
    Ok(ProblemInstance {
        params: GeneratorParams::Rays(p.clone()),
        grid,
        forward,
        a,
        noise_variance,
        d,
        truth: Some(truth),
        mask: Some(mask),
        prior_mean_hint: Some(p.background),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::LinearOperator;

    #[test]
    fn checkerboard_cell_values() {
        let p = RayParams::default();
        let lo = checkerboard_value(&p, 0, 0, 0);
        let hi = checkerboard_value(&p, p.cell, 0, 0);
        assert!((lo - 4.545e-5).abs() < 5e-9, "{lo}");
        assert!((hi - 5.555e-5).abs() < 6e-9, "{hi}");
        assert!((1.0 / lo - 22_000.0).abs() < 1e-8);
        assert!((1.0 / hi - 18_000.0).abs() < 1e-8);
        // The pattern moves with the frame index.
        assert_eq!(checkerboard_value(&p, 0, 0, p.cell), hi);
    }

    #[test]
    fn rows_are_chords() {
        let p = RayParams {
            nx: 9,
            ny: 7,
            n_t: 2,
            rays_per_time: vec![30, 11],
            ..RayParams::default()
        };
        let inst = gen_ray_tomography(&p, 17).unwrap();
        let ForwardModel::BlockDiag { blocks } = &inst.forward else {
            panic!()
        };
        assert_eq!(blocks[0].rows(), 30);
        assert_eq!(blocks[1].rows(), 11);
        let diag = (9f64).hypot(7.0);
        for b in blocks {
            for i in 0..b.rows() {
                let s: f64 = b.row(i).map(|(_, v)| v).sum();
                assert!(b.row(i).all(|(_, v)| v > 0.0));
                assert!(s > 0.0 && s <= diag + 1e-12);
            }
        }
    }

    #[test]
    fn mask_and_truth() {
        let p = RayParams {
            nx: 10,
            ny: 10,
            n_t: 2,
            rays_per_time: vec![3],
            coverage_threshold: 1,
            ..RayParams::default()
        };
        let inst = gen_ray_tomography(&p, 1).unwrap();
        let mask = inst.mask.as_ref().unwrap();
        let truth = inst.truth.as_ref().unwrap();
        assert!(mask.iter().any(|&m| m) && mask.iter().any(|&m| !m));
        for (m, v) in mask.iter().zip(truth) {
            if !m {
                assert_eq!(*v, p.background);
            } else {
                assert!(*v == p.background / 1.1 || *v == p.background / 0.9);
            }
        }
        assert_eq!(inst.d, inst.a.apply(truth).unwrap());
    }

    #[test]
    fn invalid_parameters() {
        let p = RayParams {
            rays_per_time: vec![0],
            ..RayParams::default()
        };
        assert!(gen_ray_tomography(&p, 0).is_err());
        let p = RayParams {
            n_t: 3,
            rays_per_time: vec![1, 2],
            ..RayParams::default()
        };
        assert!(gen_ray_tomography(&p, 0).is_err());
    }

    #[test]
    fn boundary_points_on_edges() {
        for k in 0..100 {
            let (p, e) = boundary_point(k as f64 / 100.0, 4.0, 3.0);
            let on = match e {
                0 => p[1] == 0.0,
                1 => p[0] == 4.0,
                2 => p[1] == 3.0,
                _ => p[0] == 0.0,
            };
            assert!(on);
            assert!((0.0..=4.0).contains(&p[0]) && (0.0..=3.0).contains(&p[1]));
        }
    }
}
