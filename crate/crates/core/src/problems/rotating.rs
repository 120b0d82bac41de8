use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::siddon::{clip_line, siddon};
use super::{add_noise, forward_operator, rng, sigma_for_level, ForwardModel, GeneratorParams, Grid, ProblemInstance};
use crate::error::{Error, Result};
use crate::linop::SparseOperator;

/// Two Gaussian bumps orbiting the image centre, one parallel-beam view
/// per frame. Lengths are in units where the image width is 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotatingParams {
    pub nx: usize,
    pub ny: usize,
    pub n_t: usize,
    /// View angle per frame (radians); defaults to `2πi/n_t`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angles: Option<Vec<f64>>,
    pub radii_count: usize,
    pub noise_level: f64,
    pub bump_width: f64,
    pub orbit_radius: f64,
    /// Counterclockwise rotation of the bumps per frame; defaults to `π/n_t`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rotation_per_step: Option<f64>,
}

impl Default for RotatingParams {
    fn default() -> Self {
        Self {
            nx: 64,
            ny: 64,
            n_t: 24,
            angles: None,
            radii_count: 91,
            noise_level: 0.04,
            bump_width: 0.06,
            orbit_radius: 0.25,
            rotation_per_step: None,
        }
    }
}

impl RotatingParams {
    pub fn view_angles(&self) -> Vec<f64> {
        match &self.angles {
            Some(a) => a.clone(),
            None => (0..self.n_t).map(|i| 2.0 * PI * i as f64 / self.n_t as f64).collect(),
        }
    }

    pub fn rotation(&self) -> f64 {
        self.rotation_per_step.unwrap_or(PI / self.n_t.max(1) as f64)
    }
}

/// Frame `i` of the phantom, `nx·ny` values with index `ix + nx·iy`.
pub fn rotating_frame(p: &RotatingParams, i: usize) -> Vec<f64> {
    let h = 1.0 / p.nx as f64;
    let (cx, cy) = (0.5 * p.nx as f64 * h, 0.5 * p.ny as f64 * h);
    let phi = p.rotation() * i as f64;
    let centres = [
        (cx + p.orbit_radius * phi.cos(), cy + p.orbit_radius * phi.sin()),
        (cx - p.orbit_radius * phi.cos(), cy - p.orbit_radius * phi.sin()),
    ];
    let w2 = 2.0 * p.bump_width * p.bump_width;
    let mut f = Vec::with_capacity(p.nx * p.ny);
    for iy in 0..p.ny {
        let y = (iy as f64 + 0.5) * h;
        for ix in 0..p.nx {
            let x = (ix as f64 + 0.5) * h;
            f.push(
                centres
                    .iter()
                    .map(|(bx, by)| (-((x - bx).powi(2) + (y - by).powi(2)) / w2).exp())
                    .sum(),
            );
        }
    }
    f
}

/// Parallel-beam projection at angle `theta`: `bins` line integrals with
/// offsets evenly covering the half-diagonal on either side of the centre.
/// Pixel side is `1/nx`.
pub fn parallel_projection(nx: usize, ny: usize, theta: f64, bins: usize) -> Result<SparseOperator> {
    if bins == 0 {
        return Err(Error::param("detector bin count must be positive"));
    }
    let (w, hgt) = (nx as f64, ny as f64);
    let half = 0.5 * w.hypot(hgt);
    let (c, s) = (theta.cos(), theta.sin());
    let offset = 0.5 * w * c + 0.5 * hgt * s;
    let scale = 1.0 / nx as f64;
    let mut trip = Vec::new();
    for j in 0..bins {
        let rho = -half + (j as f64 + 0.5) * 2.0 * half / bins as f64;
        if let Some((p0, p1)) = clip_line(w, hgt, theta, rho + offset) {
            for (k, len) in siddon(nx, ny, p0, p1) {
                trip.push((j, k, len * scale));
            }
        }
    }
    SparseOperator::from_triplets(bins, nx * ny, &trip)
}

pub fn gen_rotating_gaussians(p: &RotatingParams, seed: u64) -> Result<ProblemInstance> {
    if p.nx == 0 || p.ny == 0 || p.n_t == 0 {
        return Err(Error::param("phantom dimensions must be positive"));
    }
    let angles = p.view_angles();
    if angles.is_empty() {
        return Err(Error::param("angle list is empty"));
    }
    if angles.len() != p.n_t {
        return Err(Error::param(format!(
            "{} angles given for {} frames",
            angles.len(),
            p.n_t
        )));
    }
    if p.radii_count == 0 {
        return Err(Error::param("radii_count must be positive"));
    }
    if !(p.bump_width > 0.0) {
        return Err(Error::param("bump_width must be positive"));
    }
    if !(p.noise_level >= 0.0 && p.noise_level.is_finite()) {
        return Err(Error::param("noise level must be nonnegative"));
    }
    let blocks = angles
        .iter()
        .map(|&th| parallel_projection(p.nx, p.ny, th, p.radii_count))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<f64> = (0..p.n_t).flat_map(|i| rotating_frame(p, i)).collect();
    let grid = Grid {
        nx: p.nx,
        ny: p.ny,
        n_t: p.n_t,
        spacing: 1.0 / p.nx as f64,
    };
    let forward = ForwardModel::BlockDiag { blocks };
    let a = forward_operator(&forward, &grid)?;
    let clean = a.apply(&truth)?;
    let sigma = sigma_for_level(p.noise_level, &clean);
    let (d, noise_variance) = add_noise(clean, sigma, &mut rng(seed));
    Ok(ProblemInstance {
        params: GeneratorParams::RotatingGaussians(p.clone()),
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
