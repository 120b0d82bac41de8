//! Simultaneous genLSQR / genHyBR: project onto the gen-GK subspace, solve
//! the regularized projected problem with a per-iteration λ, and map back.

mod projected;

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use projected::{
    adaptive_weight, gcv_projected, lambda_grid, minimize_log_grid, projected_residual, solve_projected_givens,
    solve_projected_tikhonov, wgcv_projected, ProjectedSvd, GRID_POINTS,
};

use crate::error::{check_len, Error, Result};
use crate::gengk::{Bidiagonal, GenGk, GenGkFactorization};
use crate::linop::{LinearOperator, NoiseCovariance};
use crate::priorcov::PriorModel;
use crate::vecops::{dot, norm2, sub};

/// Weight used in the WGCV denominator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WgcvWeight {
    Fixed(f64),
    /// Mean of per-iteration weights from the adaptive rule.
    Adaptive,
}

impl Default for WgcvWeight {
    fn default() -> Self {
        WgcvWeight::Fixed(0.8)
    }
}

/// How λ is chosen at each iteration.
#[derive(Clone, Debug, PartialEq)]
pub enum RegStrategy {
    Fixed(f64),
    Gcv,
    Wgcv(WgcvWeight),
    /// Minimize the error against a known truth.
    Optimal(Vec<f64>),
}

impl RegStrategy {
    pub fn validate(&self) -> Result<()> {
        match self {
            RegStrategy::Fixed(l) if !(*l >= 0.0) || !l.is_finite() => {
                Err(Error::param(format!("fixed λ must be finite and nonnegative, got {l}")))
            }
            RegStrategy::Wgcv(WgcvWeight::Fixed(w)) if !(*w > 0.0 && *w <= 1.0) => {
                Err(Error::param(format!("WGCV weight must lie in (0, 1], got {w}")))
            }
            _ => Ok(()),
        }
    }

    fn uses_gcv_stop(&self) -> bool {
        matches!(self, RegStrategy::Gcv | RegStrategy::Wgcv(_))
    }
}

/// `‖μ + Q V_k z − s_true‖²` as a quadratic in `z`:
/// `zᵀ G z + 2 hᵀ z + c` with `G = (QV)ᵀ(QV)`, `h = (QV)ᵀ(μ − s_true)`.
#[derive(Clone, Debug)]
pub struct ErrorModel {
    offset: Vec<f64>,
    gram: DMatrix<f64>,
    h: Vec<f64>,
    c: f64,
}

impl ErrorModel {
    pub fn new(mean: &[f64], truth: &[f64]) -> Self {
        let offset = sub(mean, truth);
        let c = dot(&offset, &offset);
        Self {
            offset,
            gram: DMatrix::zeros(0, 0),
            h: Vec::new(),
            c,
        }
    }

    pub fn k(&self) -> usize {
        self.h.len()
    }

    /// Extend with the columns `qv[k..]`.
    pub fn extend(&mut self, qv: &[Vec<f64>]) {
        let old = self.k();
        let new = qv.len();
        if new <= old {
            return;
        }
        let mut g = DMatrix::zeros(new, new);
        g.view_mut((0, 0), (old, old)).copy_from(&self.gram);
        for i in old..new {
            for j in 0..=i {
                let v = dot(&qv[i], &qv[j]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
            self.h.push(dot(&qv[i], &self.offset));
        }
        self.gram = g;
    }

    /// Squared error for coefficients `z` (length ≤ k).
    pub fn error2(&self, z: &[f64]) -> f64 {
        let j = z.len();
        let mut quad = 0.0;
        for a in 0..j {
            let mut row = 0.0;
            for b in 0..j {
                row += self.gram[(a, b)] * z[b];
            }
            quad += z[a] * row;
        }
        let lin: f64 = z.iter().zip(&self.h).map(|(z, h)| z * h).sum();
        (quad + 2.0 * lin + self.c).max(0.0)
    }
}

/// Inputs to `select_lambda` beyond the projected problem.
#[derive(Clone, Copy, Debug, Default)]
pub struct SelectionContext<'a> {
    /// WGCV weight to use with `WgcvWeight::Adaptive`; computed from the
    /// current projection when absent.
    pub wgcv_weight: Option<f64>,
    /// Required by `RegStrategy::Optimal`.
    pub error_model: Option<&'a ErrorModel>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selection {
    pub lambda: f64,
    /// Value of the selection objective at `lambda` (projected GCV for
    /// `Fixed` and `Optimal`).
    pub gcv_value: f64,
    pub weight: Option<f64>,
}

/// Pick λ for the projected problem `(B_k, β₁)`.
pub fn select_lambda(strategy: &RegStrategy, b: &Bidiagonal, beta1: f64, ctx: SelectionContext<'_>) -> Result<Selection> {
    if b.k() == 0 {
        return Err(Error::param("λ selection needs k ≥ 1"));
    }
    strategy.validate()?;
    let svd = ProjectedSvd::new(b);
    select_on_svd(strategy, &svd, beta1, ctx)
}

fn select_on_svd(strategy: &RegStrategy, svd: &ProjectedSvd, beta1: f64, ctx: SelectionContext<'_>) -> Result<Selection> {
    let s_max = svd.s_max();
    Ok(match strategy {
        RegStrategy::Fixed(lambda) => Selection {
            lambda: *lambda,
            gcv_value: gcv_projected(svd, beta1, *lambda),
            weight: None,
        },
        RegStrategy::Gcv => {
            let (lambda, g) = minimize_log_grid(s_max, |l| gcv_projected(svd, beta1, l));
            Selection {
                lambda,
                gcv_value: g,
                weight: None,
            }
        }
        RegStrategy::Wgcv(mode) => {
            let w = match mode {
                WgcvWeight::Fixed(w) => *w,
                WgcvWeight::Adaptive => ctx.wgcv_weight.unwrap_or_else(|| adaptive_weight(svd, beta1)),
            };
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::param(format!("WGCV weight must lie in (0, 1], got {w}")));
            }
            let (lambda, g) = minimize_log_grid(s_max, |l| wgcv_projected(svd, beta1, l, w).unwrap_or(f64::INFINITY));
            Selection {
                lambda,
                gcv_value: g,
                weight: Some(w),
            }
        }
        RegStrategy::Optimal(_) => {
            let model = ctx
                .error_model
                .ok_or_else(|| Error::param("optimal λ selection requires the true solution"))?;
            let (lambda, _) = minimize_log_grid(s_max, |l| model.error2(&svd.solve(beta1, l)));
            Selection {
                lambda,
                gcv_value: gcv_projected(svd, beta1, lambda),
                weight: None,
            }
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxIter,
    GcvFlat,
    Breakdown,
    Tolerance,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::MaxIter => "max-iter",
            StopReason::GcvFlat => "gcv-flat",
            StopReason::Breakdown => "breakdown",
            StopReason::Tolerance => "tolerance",
        }
    }
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug)]
pub struct HybridOptions {
    pub max_iter: usize,
    pub reorthogonalize: bool,
    /// Enable the flat-GCV stopping rule (GCV and WGCV only).
    pub gcv_flat_stop: bool,
    pub gcv_flat_tol: f64,
    pub lambda_stagnation: f64,
    pub flat_window: usize,
    /// Stop once `‖B_k z − β₁e₁‖ / β₁` falls below this.
    pub residual_tol: Option<f64>,
    /// Ground truth for the relative-error history.
    pub truth: Option<Vec<f64>>,
    /// Restricts the relative error to entries marked `true`.
    pub mask: Option<Vec<bool>>,
}

impl Default for HybridOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            reorthogonalize: true,
            gcv_flat_stop: true,
            gcv_flat_tol: 1e-6,
            lambda_stagnation: 0.01,
            flat_window: 3,
            residual_tol: None,
            truth: None,
            mask: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub lambda: f64,
    pub data_misfit: f64,
    pub solution_qnorm: f64,
    pub gcv_value: Option<f64>,
    pub rel_error: Option<f64>,
    pub wall_time_s: f64,
    pub op_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct SolverResult {
    pub s: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub lambda: f64,
    pub records: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    pub wgcv_weight: Option<f64>,
    pub factorization: GenGkFactorization,
}

impl SolverResult {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn lambda_history(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.lambda).collect()
    }

    pub fn residual_history(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.data_misfit).collect()
    }

    pub fn gcv_history(&self) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.gcv_value).collect()
    }

    pub fn error_history(&self) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.rel_error).collect()
    }
}

/// `‖s − truth‖ / ‖truth‖`, over masked entries when a mask is given.
pub fn relative_error(s: &[f64], truth: &[f64], mask: Option<&[bool]>) -> f64 {
    match mask {
        None => norm2(&sub(s, truth)) / norm2(truth),
        Some(m) => {
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..s.len() {
                if m[i] {
                    num += (s[i] - truth[i]).powi(2);
                    den += truth[i] * truth[i];
                }
            }
            (num / den).sqrt()
        }
    }
}

/// `s = μ + Q V_k z`.
pub fn recover_solution(fact: &GenGkFactorization, mean: &[f64], z: &[f64]) -> Vec<f64> {
    let mut s = fact.qv_times(z);
    s.iter_mut().zip(mean).for_each(|(s, m)| *s += m);
    s
}

/// Projected coefficients for a given λ from an existing factorization.
pub fn solve_from_factorization(fact: &GenGkFactorization, lambda: f64) -> Result<Vec<f64>> {
    if fact.k() == 0 {
        return Ok(Vec::new());
    }
    fixed_lambda_solve(&fact.bidiagonal(), fact.beta1, lambda)
}

fn fixed_lambda_solve(b: &Bidiagonal, beta1: f64, lambda: f64) -> Result<Vec<f64>> {
    if let Some(z) = solve_projected_givens(b, beta1, lambda) {
        if z.iter().all(|v| v.is_finite()) {
            return Ok(z);
        }
    }
    Ok(solve_projected_tikhonov(b, beta1, lambda)?.0)
}

/// Simultaneous hybrid solve of `d = A s + ε`, `ε ~ N(0, R)`, with the
/// prior `s ~ N(μ, λ⁻² Q)`.
pub fn genhybr_solve(
    a: &dyn LinearOperator,
    r: &NoiseCovariance,
    prior: &PriorModel,
    d: &[f64],
    strategy: &RegStrategy,
    options: &HybridOptions,
) -> Result<SolverResult> {
    strategy.validate()?;
    let n = prior.dim();
    check_len("forward operator columns", n, a.cols())?;
    check_len("data", a.rows(), d.len())?;
    let truth = match strategy {
        RegStrategy::Optimal(t) => Some(t.as_slice()),
        _ => options.truth.as_deref(),
    };
    if let Some(t) = truth {
        check_len("true solution", n, t.len())?;
    }
    if let Some(m) = &options.mask {
        check_len("error mask", n, m.len())?;
    }

    let start = Instant::now();
    let mean = prior.mean();
    let mut b = d.to_vec();
    if !prior.has_zero_mean() {
        let mut am = vec![0.0; a.rows()];
        a.apply_to(mean, &mut am);
        b.iter_mut().zip(&am).for_each(|(b, am)| *b -= am);
    }
    let q: &dyn LinearOperator = prior.q().as_ref();

    if b.iter().all(|v| *v == 0.0) {
        // Data explained by the mean: the MAP estimate is μ.
        return Ok(SolverResult {
            s: mean.to_vec(),
            x: vec![0.0; n],
            z: Vec::new(),
            lambda: match strategy {
                RegStrategy::Fixed(l) => *l,
                _ => 0.0,
            },
            records: Vec::new(),
            stop_reason: StopReason::Breakdown,
            wgcv_weight: None,
            factorization: GenGkFactorization {
                beta1: 0.0,
                u: Vec::new(),
                rinv_u: Vec::new(),
                v: Vec::new(),
                qv: Vec::new(),
                alphas: vec![0.0],
                betas: Vec::new(),
                reorthogonalized: options.reorthogonalize,
                breakdown: Some(crate::gengk::Breakdown::Alpha { k: 0 }),
            },
        });
    }

    let mut gk = GenGk::new(a, r, q, &b, options.reorthogonalize)?;
    let beta1 = gk.factorization().beta1;
    let mut error_model = match strategy {
        RegStrategy::Optimal(t) => Some(ErrorModel::new(mean, t)),
        _ => None,
    };
    let mut omegas: Vec<f64> = Vec::new();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut z: Vec<f64> = Vec::new();
    let mut lambda = match strategy {
        RegStrategy::Fixed(l) => *l,
        _ => 0.0,
    };
    let mut weight = None;
    let mut flat_count = 0usize;
    let mut stop = StopReason::MaxIter;

    while gk.k() < options.max_iter {
        if !gk.step() {
            stop = StopReason::Breakdown;
            break;
        }
        let fact = gk.factorization();
        let k = fact.k();
        let bk = fact.bidiagonal();

        let (sel_lambda, gcv_value) = match strategy {
            RegStrategy::Fixed(l) => {
                z = fixed_lambda_solve(&bk, beta1, *l)?;
                (*l, None)
            }
            _ => {
                let svd = ProjectedSvd::new(&bk);
                if let Some(m) = error_model.as_mut() {
                    m.extend(&fact.qv[..k]);
                }
                let mut ctx = SelectionContext {
                    wgcv_weight: None,
                    error_model: error_model.as_ref(),
                };
                if matches!(strategy, RegStrategy::Wgcv(WgcvWeight::Adaptive)) {
                    omegas.push(adaptive_weight(&svd, beta1));
                    ctx.wgcv_weight = Some(omegas.iter().sum::<f64>() / omegas.len() as f64);
                }
                let sel = select_on_svd(strategy, &svd, beta1, ctx)?;
                weight = sel.weight;
                z = svd.solve(beta1, sel.lambda);
                (sel.lambda, Some(sel.gcv_value))
            }
        };
        let prev_lambda = lambda;
        lambda = sel_lambda;
        let misfit = projected_residual(&bk, beta1, &z);
        let rel_error = truth.map(|t| relative_error(&recover_solution(fact, mean, &z), t, options.mask.as_deref()));
        records.push(IterationRecord {
            iter: k,
            lambda,
            data_misfit: misfit,
            solution_qnorm: norm2(&z),
            gcv_value,
            rel_error,
            wall_time_s: start.elapsed().as_secs_f64(),
            op_time_s: gk.op_seconds(),
        });

        if gk.breakdown().is_some() {
            stop = StopReason::Breakdown;
            break;
        }
        if options.gcv_flat_stop && strategy.uses_gcv_stop() && records.len() >= 2 {
            let g1 = records[0].gcv_value.unwrap_or(f64::NAN);
            let gk_ = gcv_value.unwrap_or(f64::NAN);
            let gprev = records[records.len() - 2].gcv_value.unwrap_or(f64::NAN);
            let flat_g = ((gk_ - gprev) / g1).abs() < options.gcv_flat_tol;
            let flat_l = prev_lambda > 0.0 && ((lambda - prev_lambda) / prev_lambda).abs() < options.lambda_stagnation;
            if flat_g || flat_l {
                flat_count += 1;
            } else {
                flat_count = 0;
            }
            if flat_count >= options.flat_window {
                stop = StopReason::GcvFlat;
                break;
            }
        }
        if let Some(tol) = options.residual_tol {
            if misfit / beta1 <= tol {
                stop = StopReason::Tolerance;
                break;
            }
        }
    }

    let fact = gk.into_factorization();
    let x = fact.v_times(&z);
    let s = recover_solution(&fact, mean, &z);
    let wgcv_weight = match strategy {
        RegStrategy::Wgcv(_) => weight,
        _ => None,
    };
    Ok(SolverResult {
        s,
        x,
        z,
        lambda,
        records,
        stop_reason: stop,
        wgcv_weight,
        factorization: fact,
    })
}

pub const CONVERGENCE_HEADER: [&str; 8] = [
    "iter",
    "lambda",
    "data_misfit",
    "solution_Qnorm",
    "gcv_value",
    "rel_error",
    "wall_time_s",
    "op_time_s",
];

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{v:?}"),
        _ => String::new(),
    }
}

impl IterationRecord {
    pub(crate) fn csv_fields(&self) -> Vec<String> {
        vec![
            self.iter.to_string(),
            format!("{:?}", self.lambda),
            format!("{:?}", self.data_misfit),
            format!("{:?}", self.solution_qnorm),
            fmt_opt(self.gcv_value),
            fmt_opt(self.rel_error),
            format!("{:?}", self.wall_time_s),
            format!("{:?}", self.op_time_s),
        ]
    }
}

pub fn write_convergence_csv(path: impl AsRef<Path>, records: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CONVERGENCE_HEADER)?;
    for r in records {
        w.write_record(r.csv_fields())?;
    }
    w.flush()?;
    Ok(())
}
