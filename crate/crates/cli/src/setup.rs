//! Turn a [`RunConfig`] into problem, prior and solver objects.

use std::sync::Arc;

use dyninv::hybrid::{HybridOptions, RegStrategy, WgcvWeight};
use dyninv::linop::{DenseBudget, OpRef, ScaledIdentityOperator};
use dyninv::priorcov::{
    build_grid_spatial_prior, build_kernel_matrix, build_minij_prior, build_nonseparable_q, GammaExpKernel, Kernel,
    MaternKernel, NonseparableKernel, PointSet, PriorModel,
};
use dyninv::problems::{gen_dynamic_deblur, gen_ray_tomography, gen_rotating_gaussians, GeneratorParams, ProblemInstance};
use dyninv::decoupled::LambdaMode;
use nalgebra::DMatrix;
use toml::Value;

use crate::config::RunConfig;
use crate::CliError;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn one_of(key: &str, value: &str, allowed: &[&str]) -> Result<(), CliError> {
    if allowed.contains(&value) {
        Ok(())
    } else {
        Err(invalid(format!("{key} must be one of {allowed:?}, got {value:?}")))
    }
}

pub fn is_decoupled(cfg: &RunConfig) -> bool {
    cfg.solver.method == "decoupled"
}

/// Checks that need no data: known names, required keys, and solver/prior
/// compatibility as far as it is visible from the configuration.
pub fn validate(cfg: &RunConfig, needs_strategy: bool) -> Result<(), CliError> {
    let s = &cfg.solver;
    one_of("solver.method", &s.method, &["simultaneous", "decoupled"])?;
    one_of("solver.strategy", &s.strategy, &["fixed", "gcv", "wgcv", "optimal"])?;
    one_of("solver.lambda_mode", &s.lambda_mode, &["shared", "per-time"])?;
    one_of("prior.kind", &cfg.prior.kind, &["separable", "nonseparable"])?;
    one_of("prior.spatial_kernel", &cfg.prior.spatial_kernel, &["matern", "gamma-exp", "identity"])?;
    one_of("prior.temporal", &cfg.prior.temporal, &["identity", "kernel", "minij"])?;
    if needs_strategy && s.strategy == "fixed" && s.lambda.is_none() {
        return Err(invalid("missing field solver.lambda (required when solver.strategy = \"fixed\")"));
    }
    if s.threads == Some(0) {
        return Err(invalid("solver.threads must be positive"));
    }
    problem_source(cfg)?;
    if is_decoupled(cfg) {
        if cfg.prior.kind != "separable" {
            return Err(invalid(
                "decoupled solver needs a Kronecker prior (prior.kind = \"separable\")",
            ));
        }
        if let Some(g) = &cfg.problem.generator {
            if g != "deblur" {
                return Err(invalid(format!(
                    "decoupled solver needs a Kronecker forward operator; generator {g:?} is block-diagonal"
                )));
            }
        }
    }
    Ok(())
}

/// Same as the configuration-level check, once the instance is known.
pub fn check_compatible(cfg: &RunConfig, inst: &ProblemInstance) -> Result<(), CliError> {
    if is_decoupled(cfg) && !inst.is_kronecker() {
        return Err(invalid(
            "decoupled solver needs a Kronecker forward operator; this instance is block-diagonal",
        ));
    }
    Ok(())
}

enum Source<'a> {
    Generator(&'a str),
    Instance(&'a std::path::Path),
}

fn problem_source(cfg: &RunConfig) -> Result<Source<'_>, CliError> {
    let p = &cfg.problem;
    match (&p.generator, &p.instance) {
        (Some(_), Some(_)) => Err(invalid("problem.generator and problem.instance are mutually exclusive")),
        (None, None) => Err(invalid("missing field problem.generator (or problem.instance)")),
        (None, Some(path)) => {
            if !p.params.is_empty() {
                let keys: Vec<&String> = p.params.keys().collect();
                return Err(invalid(format!("generator parameters {keys:?} given with problem.instance")));
            }
            Ok(Source::Instance(path))
        }
        (Some(g), None) => {
            one_of("problem.generator", g, &["deblur", "rays", "rotating-gaussians"])?;
            Ok(Source::Generator(g))
        }
    }
}

pub fn generator_params(cfg: &RunConfig, name: &str) -> Result<GeneratorParams, CliError> {
    let mut table = cfg.problem.params.clone();
    table.insert("kind".into(), Value::String(name.into()));
    Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| invalid(format!("problem: {}", e.message())))
}

pub fn problem(cfg: &RunConfig) -> Result<ProblemInstance, CliError> {
    match problem_source(cfg)? {
        Source::Instance(path) => Ok(ProblemInstance::load(path)?),
        Source::Generator(name) => {
            let inst = match generator_params(cfg, name)? {
                GeneratorParams::Deblur(p) => gen_dynamic_deblur(&p, cfg.seed)?,
                GeneratorParams::Rays(p) => gen_ray_tomography(&p, cfg.seed)?,
                GeneratorParams::RotatingGaussians(p) => gen_rotating_gaussians(&p, cfg.seed)?,
            };
            Ok(inst)
        }
    }
}

fn spatial_kernel(cfg: &RunConfig) -> Result<Kernel, CliError> {
    let p = &cfg.prior;
    Ok(match p.spatial_kernel.as_str() {
        "gamma-exp" => GammaExpKernel::new(p.spatial_gamma, p.spatial_ell)?.into(),
        _ => MaternKernel::new(p.spatial_nu, p.spatial_ell)?.into(),
    })
}

fn frame_times(n_t: usize) -> Vec<f64> {
    (0..n_t).map(|i| i as f64).collect()
}

pub fn temporal_matrix(cfg: &RunConfig, n_t: usize) -> Result<DMatrix<f64>, CliError> {
    let p = &cfg.prior;
    Ok(match p.temporal.as_str() {
        "identity" => DMatrix::identity(n_t, n_t),
        "minij" => build_minij_prior(n_t)?.0.into_matrix(),
        _ => {
            let k: Kernel = MaternKernel::new(p.temporal_nu, p.temporal_ell)?.into();
            build_kernel_matrix(&k, &PointSet::from_times(&frame_times(n_t))?, p.temporal_nugget)?.into_matrix()
        }
    })
}

pub fn spatial_prior(cfg: &RunConfig, nx: usize, ny: usize) -> Result<OpRef, CliError> {
    if cfg.prior.spatial_kernel == "identity" {
        return Ok(Arc::new(ScaledIdentityOperator::identity(nx * ny)));
    }
    let kernel = spatial_kernel(cfg)?;
    let separable_axes = matches!(kernel, Kernel::Matern(k) if k.nu().is_infinite());
    if !separable_axes {
        DenseBudget::default().check(nx * ny, nx * ny).map_err(|_| {
            invalid(format!(
                "dense {0}x{0} spatial covariance is too large; use prior.spatial_nu = inf for a Kronecker-factored prior",
                nx * ny
            ))
        })?;
    }
    Ok(build_grid_spatial_prior(&kernel, nx, ny, cfg.prior.spatial_nugget)?)
}

pub fn prior(cfg: &RunConfig, inst: &ProblemInstance) -> Result<PriorModel, CliError> {
    let g = inst.grid;
    let n = g.n();
    let mean = cfg.prior.mean.or(inst.prior_mean_hint).map(|v| vec![v; n]);
    if cfg.prior.kind == "nonseparable" {
        let kernel = NonseparableKernel::new(spatial_kernel(cfg)?, cfg.prior.c1, cfg.prior.c2)?;
        let q = build_nonseparable_q(
            &kernel,
            &PointSet::grid_2d(g.nx, g.ny),
            &frame_times(g.n_t),
            cfg.prior.spatial_nugget,
            DenseBudget::default(),
        )?;
        return Ok(PriorModel::general(Arc::new(q), g.n_s(), g.n_t, mean)?);
    }
    let q_t = temporal_matrix(cfg, g.n_t)?;
    let q_s = spatial_prior(cfg, g.nx, g.ny)?;
    Ok(PriorModel::separable(q_t, q_s, mean)?)
}

pub fn strategy(cfg: &RunConfig, inst: &ProblemInstance) -> Result<RegStrategy, CliError> {
    let s = &cfg.solver;
    let strat = match s.strategy.as_str() {
        "fixed" => RegStrategy::Fixed(
            s.lambda
                .ok_or_else(|| invalid("missing field solver.lambda (required when solver.strategy = \"fixed\")"))?,
        ),
        "gcv" => RegStrategy::Gcv,
        "optimal" => RegStrategy::Optimal(
            inst.truth
                .clone()
                .ok_or_else(|| invalid("solver.strategy = \"optimal\" needs an instance with a true solution"))?,
        ),
        _ if s.wgcv_adaptive => RegStrategy::Wgcv(WgcvWeight::Adaptive),
        _ => RegStrategy::Wgcv(WgcvWeight::Fixed(s.wgcv_weight)),
    };
    strat.validate().map_err(|e| invalid(format!("solver: {e}")))?;
    Ok(strat)
}

pub fn hybrid_options(cfg: &RunConfig, inst: &ProblemInstance) -> HybridOptions {
    let s = &cfg.solver;
    HybridOptions {
        max_iter: s.max_iter,
        reorthogonalize: s.reorthogonalize,
        gcv_flat_stop: s.gcv_flat_stop,
        gcv_flat_tol: s.gcv_flat_tol,
        lambda_stagnation: s.lambda_stagnation,
        flat_window: s.flat_window.max(1),
        residual_tol: s.residual_tol,
        truth: inst.truth.clone(),
        mask: inst.mask.clone(),
    }
}

pub fn lambda_mode(cfg: &RunConfig) -> LambdaMode {
    if cfg.solver.lambda_mode == "per-time" {
        LambdaMode::PerTime
    } else {
        LambdaMode::Shared
    }
}
