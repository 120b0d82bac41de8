use std::fs;
use std::path::Path;

use dyninv::decoupled::{solve_decoupled, write_decoupled_log, DecoupledOptions, DecoupledPlan, DecoupledResult};
use dyninv::gengk::GenGk;
use dyninv::hybrid::{genhybr_solve, relative_error, write_convergence_csv, RegStrategy, SolverResult};
use dyninv::linop::io::write_field;
use dyninv::linop::DenseBudget;
use dyninv::oracle::{
    dense_posterior, map_general_tikhonov, map_normal_equations, map_sherman_morrison, select_lambda_full,
    DenseProblem,
};
use dyninv::priorcov::{GammaExpKernel, Kernel, MaternKernel, PriorModel};
use dyninv::problems::ProblemInstance;
use dyninv::uq::{decoupled_variance_diag, PosteriorApprox};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::setup;
use crate::CliError;

const VARIANCE_TOLERANCE: f64 = 1e-6;

fn prepare_dir(cfg: &RunConfig, command: &str) -> Result<std::path::PathBuf, CliError> {
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("run.toml"), cfg.manifest(command)?)?;
    Ok(dir)
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = toml::to_string(value).map_err(|e| CliError::Validation(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn generate(cfg: &RunConfig) -> Result<(), CliError> {
    setup::validate(cfg, false)?;
    if cfg.problem.generator.is_none() {
        return Err(CliError::Validation("missing field problem.generator".into()));
    }
    let inst = setup::problem(cfg)?;
    let dir = prepare_dir(cfg, "generate")?;
    inst.save(&dir)?;
    println!(
        "generated {} instance: m = {}, n = {} ({}x{}x{}), noise variance {:e} -> {}",
        cfg.problem.generator.as_deref().unwrap_or_default(),
        inst.m(),
        inst.n(),
        inst.grid.nx,
        inst.grid.ny,
        inst.grid.n_t,
        inst.noise_variance,
        dir.display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize, Default)]
pub struct SolveSummary {
    pub method: String,
    pub strategy: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub stop_reason: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wgcv_weight: Option<f64>,
    pub m: usize,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_time_lambda: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_time_iterations: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_time_stop_reason: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failures: Option<Vec<String>>,
}

struct Loaded {
    inst: ProblemInstance,
    prior: PriorModel,
}

fn load(cfg: &RunConfig, needs_strategy: bool) -> Result<Loaded, CliError> {
    setup::validate(cfg, needs_strategy)?;
    let inst = setup::problem(cfg)?;
    setup::check_compatible(cfg, &inst)?;
    let prior = setup::prior(cfg, &inst)?;
    Ok(Loaded { inst, prior })
}

fn plan(l: &Loaded) -> Result<DecoupledPlan, CliError> {
    let parts = l.inst.kronecker_parts()?;
    let (q_t, q_s) = l
        .prior
        .kronecker_factors()
        .ok_or_else(|| CliError::Validation("decoupled solver needs a Kronecker prior".into()))?;
    let mean = (!l.prior.has_zero_mean()).then(|| l.prior.mean().to_vec());
    Ok(DecoupledPlan::build(
        &parts.a_t,
        parts.a_s,
        &parts.r_t,
        parts.r_s,
        q_t,
        q_s.clone(),
        &l.inst.d,
        mean,
    )?)
}

fn decoupled_options(cfg: &RunConfig, inst: &ProblemInstance) -> DecoupledOptions {
    DecoupledOptions {
        lambda_mode: setup::lambda_mode(cfg),
        hybrid: setup::hybrid_options(cfg, inst),
        threads: cfg.solver.threads,
    }
}

fn set_global_threads(cfg: &RunConfig) {
    if let Some(t) = cfg.solver.threads {
        if rayon::ThreadPoolBuilder::new().num_threads(t).build_global().is_err() {
            log::warn!("thread pool already initialized; solver.threads ignored");
        }
    }
}

enum Solved {
    Simultaneous(SolverResult),
    Decoupled(DecoupledPlan, DecoupledResult),
}

pub fn solve(cfg: &RunConfig) -> Result<(), CliError> {
    let l = load(cfg, true)?;
    let strategy = setup::strategy(cfg, &l.inst)?;
    let dir = prepare_dir(cfg, "solve")?;
    let g = l.inst.grid;
    let start = std::time::Instant::now();
    let mut summary = SolveSummary {
        method: cfg.solver.method.clone(),
        strategy: cfg.solver.strategy.clone(),
        m: l.inst.m(),
        n: l.inst.n(),
        ..Default::default()
    };

    let solved = if setup::is_decoupled(cfg) {
        let plan = plan(&l)?;
        info!("decoupled plan ready: {} subproblems", plan.n_t());
        let res = solve_decoupled(&plan, &strategy, &decoupled_options(cfg, &l.inst))?;
        write_decoupled_log(dir.join("decoupled.csv"), &res)?;
        write_field(dir.join("reconstruction.bin"), g.n_s(), g.n_t, res.s.as_slice())?;
        summary.lambda = res.shared_lambda;
        summary.iterations = res.per_time_iters().into_iter().max().unwrap_or(0);
        summary.per_time_lambda = Some(res.per_time_lambda());
        summary.per_time_iterations = Some(res.per_time_iters());
        let reasons: Vec<String> = res
            .subproblems
            .iter()
            .map(|s| s.stop_reason.map_or("skipped".to_string(), |r| r.to_string()))
            .collect();
        summary.stop_reason = common_reason(&reasons);
        summary.per_time_stop_reason = Some(reasons);
        if !res.failures.is_empty() {
            summary.failures = Some(res.failures.iter().map(|(i, e)| format!("time {i}: {e}")).collect());
        }
        Solved::Decoupled(plan, res)
    } else {
        set_global_threads(cfg);
        let r = l.inst.noise();
        let opts = setup::hybrid_options(cfg, &l.inst);
        let res = genhybr_solve(l.inst.a.as_ref(), &r, &l.prior, &l.inst.d, &strategy, &opts)?;
        write_convergence_csv(dir.join("convergence.csv"), &res.records)?;
        write_field(dir.join("reconstruction.bin"), g.n_s(), g.n_t, &res.s)?;
        summary.lambda = Some(res.lambda);
        summary.iterations = res.iterations();
        summary.stop_reason = res.stop_reason.to_string();
        summary.wgcv_weight = res.wgcv_weight;
        Solved::Simultaneous(res)
    };
    summary.wall_time_s = start.elapsed().as_secs_f64();
    let s = match &solved {
        Solved::Simultaneous(r) => r.s.clone(),
        Solved::Decoupled(_, r) => r.s_vec(),
    };
    summary.rel_error = l
        .inst
        .truth
        .as_ref()
        .map(|t| relative_error(&s, t, l.inst.mask.as_deref()));
    write_toml(&dir.join("summary.toml"), &summary)?;
    print_summary(&summary);

    if let Some(f) = &summary.failures {
        return Err(CliError::Core(dyninv::Error::Degenerate(format!(
            "{} decoupled subproblem(s) failed: {}",
            f.len(),
            f.join("; ")
        ))));
    }
    if cfg.uq.enabled {
        let lambda = cfg.uq.lambda.or(summary.lambda).ok_or_else(|| {
            CliError::Validation("missing field uq.lambda (no single λ was selected)".into())
        })?;
        let k = cfg.uq.rank.unwrap_or(cfg.solver.max_iter);
        let (var, rank) = match &solved {
            Solved::Simultaneous(res) => {
                let fact = res.factorization.truncated(k.min(res.factorization.k()));
                let approx = PosteriorApprox::new(&fact, l.prior.q().clone(), l.prior.q_diagonal()?, lambda, fact.k())?;
                (approx.variance_diag(), approx.rank())
            }
            Solved::Decoupled(plan, res) => {
                let v = decoupled_variance_diag(plan, &res.subproblems, lambda)?;
                (v.as_slice().to_vec(), res.per_time_iters().into_iter().sum())
            }
        };
        finish_variance(cfg, &l, &dir, lambda, k, rank, &var)?;
    }
    Ok(())
}

fn common_reason(reasons: &[String]) -> String {
    match reasons.first() {
        Some(r) if reasons.iter().all(|x| x == r) => r.clone(),
        Some(_) => "mixed".into(),
        None => "none".into(),
    }
}

fn print_summary(s: &SolveSummary) {
    let lambda = s.lambda.map_or("per-time".to_string(), |l| format!("{l:e}"));
    let err = s.rel_error.map_or(String::new(), |e| format!(", rel_error {e:.6e}"));
    println!(
        "{} {}: λ = {lambda}, {} iterations, stop {}, {:.3} s{err}",
        s.method, s.strategy, s.iterations, s.stop_reason, s.wall_time_s
    );
}

fn resolve_lambda(cfg: &RunConfig) -> Result<f64, CliError> {
    if let Some(l) = cfg.uq.lambda {
        return Ok(l);
    }
    if let Some(path) = &cfg.uq.summary {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read uq.summary {}: {e}", path.display())))?;
        let s: SolveSummary = toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("uq.summary {}: {}", path.display(), e.message())))?;
        return s
            .lambda
            .ok_or_else(|| CliError::Validation(format!("{} has no single λ; set uq.lambda", path.display())));
    }
    Err(CliError::Validation(
        "missing field uq.lambda (or uq.summary pointing at a solve summary)".into(),
    ))
}

#[derive(Serialize)]
struct VarianceMeta {
    method: String,
    lambda: f64,
    k: usize,
    rank: usize,
    reorthogonalize: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    verification: Option<Verification>,
}

#[derive(Serialize)]
struct Verification {
    oracle: String,
    max_abs_diff: f64,
    max_rel_diff: f64,
    tolerance: f64,
    within_tolerance: bool,
}

pub fn variance(cfg: &RunConfig) -> Result<(), CliError> {
    let lambda = resolve_lambda(cfg)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(CliError::Validation(format!("variance needs λ > 0, got {lambda}")));
    }
    let l = load(cfg, false)?;
    let dir = prepare_dir(cfg, "variance")?;
    let k = cfg.uq.rank.unwrap_or(cfg.solver.max_iter);
    let (var, rank) = if setup::is_decoupled(cfg) {
        let plan = plan(&l)?;
        let mut opts = decoupled_options(cfg, &l.inst);
        opts.lambda_mode = dyninv::decoupled::LambdaMode::Shared;
        opts.hybrid.max_iter = k;
        opts.hybrid.gcv_flat_stop = false;
        opts.hybrid.truth = None;
        let res = solve_decoupled(&plan, &RegStrategy::Fixed(lambda), &opts)?;
        let v = decoupled_variance_diag(&plan, &res.subproblems, lambda)?;
        (v.as_slice().to_vec(), res.per_time_iters().into_iter().sum())
    } else {
        set_global_threads(cfg);
        let q_diag = l.prior.q_diagonal()?;
        if k == 0 {
            let l2 = lambda * lambda;
            (q_diag.iter().map(|q| q / l2).collect(), 0)
        } else {
            let mut b = l.inst.d.clone();
            if !l.prior.has_zero_mean() {
                let am = l.inst.a.apply(l.prior.mean())?;
                b.iter_mut().zip(&am).for_each(|(b, a)| *b -= a);
            }
            let r = l.inst.noise();
            let mut gk = GenGk::new(l.inst.a.as_ref(), &r, l.prior.q().as_ref(), &b, cfg.solver.reorthogonalize)?;
            gk.run_to(k);
            let fact = gk.into_factorization();
            let approx = PosteriorApprox::new(&fact, l.prior.q().clone(), q_diag, lambda, fact.k())?;
            (approx.variance_diag(), approx.rank())
        }
    };
    finish_variance(cfg, &l, &dir, lambda, k, rank, &var)
}

fn finish_variance(
    cfg: &RunConfig,
    l: &Loaded,
    dir: &Path,
    lambda: f64,
    k: usize,
    rank: usize,
    var: &[f64],
) -> Result<(), CliError> {
    let g = l.inst.grid;
    write_field(dir.join("variance.bin"), g.n_s(), g.n_t, var)?;
    let verification = if cfg.uq.oracle_check && l.inst.n() <= cfg.uq.oracle_max_n {
        let p = DenseProblem::from_operators(
            l.inst.a.as_ref(),
            &l.inst.noise(),
            &l.prior,
            &l.inst.d,
            lambda,
            DenseBudget::default(),
        )?;
        let post = dense_posterior(&p)?;
        let (mut abs, mut rel) = (0.0f64, 0.0f64);
        for (i, v) in var.iter().enumerate() {
            let want = post[(i, i)];
            abs = abs.max((v - want).abs());
            rel = rel.max((v - want).abs() / want.abs().max(f64::MIN_POSITIVE));
        }
        Some(Verification {
            oracle: "dense posterior diagonal".into(),
            max_abs_diff: abs,
            max_rel_diff: rel,
            tolerance: VARIANCE_TOLERANCE,
            within_tolerance: rel <= VARIANCE_TOLERANCE,
        })
    } else {
        None
    };
    let meta = VarianceMeta {
        method: cfg.solver.method.clone(),
        lambda,
        k,
        rank,
        reorthogonalize: cfg.solver.reorthogonalize,
        verification,
    };
    write_toml(&dir.join("variance_meta.toml"), &meta)?;
    let mean = var.iter().sum::<f64>() / var.len().max(1) as f64;
    println!("variance: λ = {lambda:e}, k = {k}, rank {rank}, mean {mean:e}");
    if let Some(v) = &meta.verification {
        println!(
            "verification: max relative difference to dense posterior diagonal {:e} (tolerance {:e}, {})",
            v.max_rel_diff,
            v.tolerance,
            if v.within_tolerance { "within" } else { "outside" }
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleSummary {
    lambda: f64,
    lambda_from_gcv: bool,
    n: usize,
    m: usize,
    normal_vs_stacked: f64,
    normal_vs_data_space: f64,
    stacked_vs_data_space: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    rel_error: Option<f64>,
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

pub fn oracle(cfg: &RunConfig) -> Result<(), CliError> {
    let l = load(cfg, false)?;
    let from_gcv = cfg.solver.strategy == "gcv" && cfg.solver.lambda.is_none();
    let lambda = match cfg.solver.lambda.or(cfg.uq.lambda) {
        Some(v) => v,
        None if from_gcv => 1.0,
        None => {
            return Err(CliError::Validation(
                "missing field solver.lambda (or set solver.strategy = \"gcv\")".into(),
            ))
        }
    };
    let dir = prepare_dir(cfg, "oracle")?;
    let budget = DenseBudget::default();
    let mut p = DenseProblem::from_operators(l.inst.a.as_ref(), &l.inst.noise(), &l.prior, &l.inst.d, lambda, budget)?;
    if from_gcv {
        p.lambda = select_lambda_full(&p)?;
    }
    let s1 = map_normal_equations(&p)?;
    let s2 = map_general_tikhonov(&p)?;
    let s3 = map_sherman_morrison(&p)?;
    let g = l.inst.grid;
    write_field(dir.join("oracle_map.bin"), g.n_s(), g.n_t, &s1)?;
    let summary = OracleSummary {
        lambda: p.lambda,
        lambda_from_gcv: from_gcv,
        n: p.n(),
        m: p.m(),
        normal_vs_stacked: rel_diff(&s1, &s2),
        normal_vs_data_space: rel_diff(&s1, &s3),
        stacked_vs_data_space: rel_diff(&s2, &s3),
        rel_error: l.inst.truth.as_ref().map(|t| relative_error(&s1, t, l.inst.mask.as_deref())),
    };
    write_toml(&dir.join("oracle_summary.toml"), &summary)?;
    println!(
        "oracle: λ = {:e}, pairwise relative differences {:e} {:e} {:e}",
        summary.lambda, summary.normal_vs_stacked, summary.normal_vs_data_space, summary.stacked_vs_data_space
    );
    Ok(())
}

pub fn kernel_eval(cfg: &RunConfig) -> Result<(), CliError> {
    let k = &cfg.kernel;
    let kernel: Kernel = match k.family.as_str() {
        "matern" => MaternKernel::new(k.nu, k.ell)?.into(),
        "gamma-exp" => GammaExpKernel::new(k.gamma, k.ell)?.into(),
        other => {
            return Err(CliError::Validation(format!(
                "kernel.family must be \"matern\" or \"gamma-exp\", got {other:?}"
            )))
        }
    };
    if k.points < 2 || !(k.r_max > 0.0 && k.r_max.is_finite()) {
        return Err(CliError::Validation("kernel.points must be ≥ 2 and kernel.r_max positive".into()));
    }
    let dir = prepare_dir(cfg, "kernel-eval")?;
    let mut out = String::from("r,value\n");
    for i in 0..k.points {
        let r = k.r_max * i as f64 / (k.points - 1) as f64;
        out.push_str(&format!("{r:?},{:?}\n", kernel.eval(r)));
    }
    fs::write(dir.join("kernel.csv"), out)?;
    println!("wrote {} kernel values to {}", k.points, dir.join("kernel.csv").display());
    Ok(())
}
