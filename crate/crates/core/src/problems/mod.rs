//! Synthetic test problems: dynamic deblurring, straight-ray tomography and
//! a rotating-Gaussians phantom.

mod deblur;
mod rays;
mod rotating;
pub mod siddon;

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linop::io::{read_binary, read_dense_csv, read_triplets_csv, write_dense_csv, write_field, write_triplets_csv};
use crate::linop::{
    BlockDiagOperator, DenseOperator, KroneckerOperator, LinearOperator, NoiseCovariance, OpRef, SparseOperator,
};
use crate::vecops::norm2;

pub use deblur::{blur_1d, deblur_truth, gen_dynamic_deblur, DeblurParams};
pub use rays::{checkerboard_value, gen_ray_tomography, RayParams};
pub use rotating::{gen_rotating_gaussians, parallel_projection, rotating_frame, RotatingParams};

/// Parameters of the generator that produced an instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorParams {
    Deblur(DeblurParams),
    Rays(RayParams),
    RotatingGaussians(RotatingParams),
}

/// Space-time grid: `nx * ny` pixels of side `spacing`, `n_t` frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub n_t: usize,
    pub spacing: f64,
}

impl Grid {
    pub fn n_s(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n(&self) -> usize {
        self.n_s() * self.n_t
    }
}

/// Structure of the forward operator.
#[derive(Clone, Debug)]
pub enum ForwardModel {
    /// `A = A_t ⊗ (A_y ⊗ A_x)`.
    Kronecker {
        a_t: DMatrix<f64>,
        a_x: SparseOperator,
        a_y: SparseOperator,
    },
    /// One block per frame.
    BlockDiag { blocks: Vec<SparseOperator> },
}

/// Pieces needed by the decoupled solver.
pub struct KroneckerParts {
    pub a_t: DMatrix<f64>,
    pub a_s: OpRef,
    pub r_t: DMatrix<f64>,
    pub r_s: NoiseCovariance,
}

#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub params: GeneratorParams,
    pub grid: Grid,
    pub forward: ForwardModel,
    pub a: OpRef,
    /// Noise variance; zero means noise-free data, in which case `R = I`.
    pub noise_variance: f64,
    pub d: Vec<f64>,
    pub truth: Option<Vec<f64>>,
    /// Pixels (space-time) where errors are measured.
    pub mask: Option<Vec<bool>>,
    pub prior_mean_hint: Option<f64>,
    pub seed: u64,
}

impl ProblemInstance {
    pub fn m(&self) -> usize {
        self.d.len()
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn noise(&self) -> NoiseCovariance {
        noise_cov(self.noise_variance, self.m())
    }

    pub fn prior_mean(&self) -> Option<Vec<f64>> {
        self.prior_mean_hint.map(|v| vec![v; self.n()])
    }

    pub fn is_kronecker(&self) -> bool {
        matches!(self.forward, ForwardModel::Kronecker { .. })
    }

    /// `(A_t, A_s, R_t, R_s)` with `R = R_t ⊗ R_s`, for Kronecker forwards.
    pub fn kronecker_parts(&self) -> Result<KroneckerParts> {
        match &self.forward {
            ForwardModel::Kronecker { a_t, a_x, a_y } => {
                let a_s: OpRef = Arc::new(KroneckerOperator::new(Arc::new(a_y.clone()), Arc::new(a_x.clone())));
                let m_s = a_s.rows();
                Ok(KroneckerParts {
                    a_t: a_t.clone(),
                    r_t: DMatrix::identity(a_t.nrows(), a_t.nrows()),
                    r_s: noise_cov(self.noise_variance, m_s),
                    a_s,
                })
            }
            ForwardModel::BlockDiag { .. } => Err(Error::param(
                "forward operator is block-diagonal, not a Kronecker product",
            )),
        }
    }

    /// All frames' blocks stacked on top of each other, acting on one image.
    pub fn static_forward(&self) -> Result<SparseOperator> {
        let ForwardModel::BlockDiag { blocks } = &self.forward else {
            return Err(Error::param("static forward needs a block-diagonal instance"));
        };
        let mut triplets = Vec::new();
        let mut offset = 0;
        for b in blocks {
            triplets.extend(b.triplets().into_iter().map(|(i, j, v)| (i + offset, j, v)));
            offset += b.rows();
        }
        SparseOperator::from_triplets(offset, self.grid.n_s(), &triplets)
    }

    /// Write the instance to `dir` (created if missing).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let forward = match &self.forward {
            ForwardModel::Kronecker { a_t, a_x, a_y } => {
                write_dense_csv(dir.join("a_t.csv"), a_t)?;
                write_triplets_csv(dir.join("a_x.csv"), a_x)?;
                write_triplets_csv(dir.join("a_y.csv"), a_y)?;
                ForwardManifest::Kronecker {
                    a_t: "a_t.csv".into(),
                    a_x: "a_x.csv".into(),
                    a_y: "a_y.csv".into(),
                    a_x_rows: a_x.rows(),
                    a_y_rows: a_y.rows(),
                }
            }
            ForwardModel::BlockDiag { blocks } => {
                let mut files = Vec::new();
                for (i, b) in blocks.iter().enumerate() {
                    let name = format!("block_{i:04}.csv");
                    write_triplets_csv(dir.join(&name), b)?;
                    files.push(name);
                }
                ForwardManifest::BlockDiag {
                    blocks: files,
                    block_rows: blocks.iter().map(|b| b.rows()).collect(),
                }
            }
        };
        write_field(dir.join("d.bin"), self.m(), 1, &self.d)?;
        let truth = match &self.truth {
            Some(t) => {
                write_field(dir.join("truth.bin"), self.grid.n_s(), self.grid.n_t, t)?;
                Some("truth.bin".to_string())
            }
            None => None,
        };
        let mask = match &self.mask {
            Some(mk) => {
                let v: Vec<f64> = mk.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
                write_field(dir.join("mask.bin"), self.grid.n_s(), self.grid.n_t, &v)?;
                Some("mask.bin".to_string())
            }
            None => None,
        };
        let manifest = Manifest {
            seed: self.seed,
            noise_variance: self.noise_variance,
            prior_mean_hint: self.prior_mean_hint,
            data: "d.bin".into(),
            truth,
            mask,
            grid: self.grid,
            generator: self.params.clone(),
            forward,
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(dir.join(MANIFEST), text)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = std::fs::read_to_string(dir.join(MANIFEST))?;
        let man: Manifest = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        let grid = man.grid;
        let n_s = grid.n_s();
        let forward = match &man.forward {
            ForwardManifest::Kronecker {
                a_t,
                a_x,
                a_y,
                a_x_rows,
                a_y_rows,
            } => ForwardModel::Kronecker {
                a_t: read_dense_csv(dir.join(a_t))?,
                a_x: read_triplets_csv(dir.join(a_x), *a_x_rows, grid.nx)?,
                a_y: read_triplets_csv(dir.join(a_y), *a_y_rows, grid.ny)?,
            },
            ForwardManifest::BlockDiag { blocks, block_rows } => {
                if blocks.len() != block_rows.len() || blocks.len() != grid.n_t {
                    return Err(Error::Format(format!(
                        "manifest lists {} blocks and {} row counts for {} frames",
                        blocks.len(),
                        block_rows.len(),
                        grid.n_t
                    )));
                }
                let blocks = blocks
                    .iter()
                    .zip(block_rows)
                    .map(|(f, &r)| read_triplets_csv(dir.join(f), r, n_s))
                    .collect::<Result<Vec<_>>>()?;
                ForwardModel::BlockDiag { blocks }
            }
        };
        let field = |name: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
            let m = read_binary(dir.join(name))?;
            if m.nrows() != rows || m.ncols() != cols {
                return Err(Error::Format(format!(
                    "{name} is {}x{}, expected {rows}x{cols}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            Ok(m.as_slice().to_vec())
        };
        let a = forward_operator(&forward, &grid)?;
        let d = field(&man.data, a.rows(), 1)?;
        let truth = man.truth.as_deref().map(|f| field(f, n_s, grid.n_t)).transpose()?;
        let mask = man
            .mask
            .as_deref()
            .map(|f| field(f, n_s, grid.n_t).map(|v| v.iter().map(|&x| x != 0.0).collect()))
            .transpose()?;
        Ok(Self {
            params: man.generator,
            grid,
            forward,
            a,
            noise_variance: man.noise_variance,
            d,
            truth,
            mask,
            prior_mean_hint: man.prior_mean_hint,
            seed: man.seed,
        })
    }
}

pub const MANIFEST: &str = "manifest.toml";

#[derive(Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    noise_variance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    prior_mean_hint: Option<f64>,
    data: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask: Option<String>,
    grid: Grid,
    generator: GeneratorParams,
    forward: ForwardManifest,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum ForwardManifest {
    Kronecker {
        a_t: String,
        a_x: String,
        a_y: String,
        a_x_rows: usize,
        a_y_rows: usize,
    },
    BlockDiag {
        blocks: Vec<String>,
        block_rows: Vec<usize>,
    },
}

fn noise_cov(variance: f64, m: usize) -> NoiseCovariance {
    if variance > 0.0 {
        NoiseCovariance::ScaledIdentity { variance, n: m }
    } else {
        NoiseCovariance::identity(m)
    }
}

pub(crate) fn forward_operator(forward: &ForwardModel, grid: &Grid) -> Result<OpRef> {
    let n_s = grid.n_s();
    Ok(match forward {
        ForwardModel::Kronecker { a_t, a_x, a_y } => {
            if a_x.cols() != grid.nx || a_y.cols() != grid.ny || a_t.ncols() != grid.n_t {
                return Err(Error::Format("Kronecker factors do not match the grid".into()));
            }
            let a_s: OpRef = Arc::new(KroneckerOperator::new(Arc::new(a_y.clone()), Arc::new(a_x.clone())));
            Arc::new(KroneckerOperator::new(Arc::new(DenseOperator::new(a_t.clone())), a_s))
        }
        ForwardModel::BlockDiag { blocks } => {
            if blocks.len() != grid.n_t || blocks.iter().any(|b| b.cols() != n_s) {
                return Err(Error::Format("blocks do not match the grid".into()));
            }
            let ops: Vec<OpRef> = blocks.iter().map(|b| Arc::new(b.clone()) as OpRef).collect();
            Arc::new(BlockDiagOperator::new(ops))
        }
    })
}

/// Apply the forward operator to the truth and add Gaussian noise with
/// standard deviation `sigma` drawn from `rng`. Returns `(d, sigma²)`.
pub(crate) fn add_noise(clean: Vec<f64>, sigma: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    if sigma <= 0.0 {
        return (clean, 0.0);
    }
    let d = clean
        .into_iter()
        .map(|v| {
            let e: f64 = StandardNormal.sample(rng);
            v + sigma * e
        })
        .collect();
    (d, sigma * sigma)
}

/// Noise standard deviation for a relative noise level: `level·‖As‖/√m`.
pub(crate) fn sigma_for_level(level: f64, clean: &[f64]) -> f64 {
    if clean.is_empty() {
        return 0.0;
    }
    level * norm2(clean) / (clean.len() as f64).sqrt()
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
