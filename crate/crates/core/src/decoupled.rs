//! Decoupled solver for fully Kronecker-structured problems: one spatial
//! subproblem per temporal singular value, solved independently.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densela::{cholesky, sym_inv_sqrt};
use crate::error::{check_len, Error, Result};
use crate::gengk::GenGkFactorization;
use crate::hybrid::{genhybr_solve, HybridOptions, IterationRecord, RegStrategy, StopReason, CONVERGENCE_HEADER};
use crate::linop::{kron_matvec_reshaped, DenseOperator, NoiseCovariance, OpRef, ScaledOperator};
use crate::priorcov::PriorModel;

/// Relative cutoff below which a temporal singular value counts as zero.
pub const SIGMA_CUTOFF: f64 = 1e-14;

/// Precomputed temporal factorization and subproblem right-hand sides.
#[derive(Clone, Debug)]
pub struct DecoupledPlan {
    a_s: OpRef,
    r_s: NoiseCovariance,
    q_s: OpRef,
    q_t: DMatrix<f64>,
    /// Upper triangular, `Q_t = L_tᵀ L_t`.
    l_t: DMatrix<f64>,
    /// `m_t x n_t`; columns past `min(m_t, n_t)` are unused.
    u_t: DMatrix<f64>,
    sigma: Vec<f64>,
    v_t: DMatrix<f64>,
    rhs: Vec<Vec<f64>>,
    mean: Vec<f64>,
}

impl DecoupledPlan {
    /// Plan for `d = (A_t ⊗ A_s) s + ε`, `ε ~ N(0, R_t ⊗ R_s)`, prior
    /// `N(μ, λ⁻² Q_t ⊗ Q_s)`. `d` and `μ` are column-major `m_s x m_t` and
    /// `n_s x n_t` arrays.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        a_t: &DMatrix<f64>,
        a_s: OpRef,
        r_t: &DMatrix<f64>,
        r_s: NoiseCovariance,
        q_t: &DMatrix<f64>,
        q_s: OpRef,
        d: &[f64],
        mean: Option<Vec<f64>>,
    ) -> Result<Self> {
        let (m_t, n_t) = a_t.shape();
        let (m_s, n_s) = (a_s.rows(), a_s.cols());
        check_len("temporal noise covariance", m_t, r_t.nrows())?;
        check_len("temporal noise covariance", m_t, r_t.ncols())?;
        check_len("temporal prior", n_t, q_t.nrows())?;
        check_len("temporal prior", n_t, q_t.ncols())?;
        check_len("spatial noise covariance", m_s, r_s.dim())?;
        check_len("spatial prior", n_s, q_s.rows())?;
        check_len("spatial prior", n_s, q_s.cols())?;
        check_len("data", m_s * m_t, d.len())?;
        let mean = mean.unwrap_or_else(|| vec![0.0; n_s * n_t]);
        check_len("prior mean", n_s * n_t, mean.len())?;

        let l_t = cholesky(q_t, "temporal prior covariance")?.l().transpose();
        let r_isqrt = sym_inv_sqrt(r_t, "temporal noise covariance")?;
        let a_hat = &r_isqrt * a_t * l_t.transpose();

        // Pad to at least n_t rows so the SVD yields a full V_t.
        let rows = m_t.max(n_t);
        let mut padded = DMatrix::zeros(rows, n_t);
        padded.view_mut((0, 0), (m_t, n_t)).copy_from(&a_hat);
        let svd = padded.svd(true, true);
        let u_full = svd.u.expect("left singular vectors requested");
        let v_t = svd.v_t.expect("right singular vectors requested").transpose();
        let s_max = svd.singular_values.max();
        let sigma: Vec<f64> = svd
            .singular_values
            .iter()
            .enumerate()
            .map(|(i, &s)| if i < m_t.min(n_t) && s > SIGMA_CUTOFF * s_max { s } else { 0.0 })
            .collect();
        let u_t = u_full.view((0, 0), (m_t, n_t)).into_owned();

        // B = mat(d − Aμ), m_s x m_t
        let mut b = d.to_vec();
        if mean.iter().any(|v| *v != 0.0) {
            let at: OpRef = Arc::new(DenseOperator::new(a_t.clone()));
            let am = kron_matvec_reshaped(at.as_ref(), a_s.as_ref(), &mean)?;
            b.iter_mut().zip(&am).for_each(|(b, a)| *b -= a);
        }
        let b = DMatrix::from_vec(m_s, m_t, b);
        let rhs = (0..n_t)
            .map(|i| {
                if sigma[i] == 0.0 {
                    Vec::new()
                } else {
                    let w = &r_isqrt * u_t.column(i);
                    (&b * w).iter().copied().collect()
                }
            })
            .collect();

        Ok(Self {
            a_s,
            r_s,
            q_s,
            q_t: q_t.clone(),
            l_t,
            u_t,
            sigma,
            v_t,
            rhs,
            mean,
        })
    }

    pub fn n_s(&self) -> usize {
        self.a_s.cols()
    }

    pub fn n_t(&self) -> usize {
        self.q_t.nrows()
    }

    /// Temporal singular values in nonincreasing order, zeroed below the
    /// cutoff.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn u_t(&self) -> &DMatrix<f64> {
        &self.u_t
    }

    pub fn v_t(&self) -> &DMatrix<f64> {
        &self.v_t
    }

    pub fn l_t(&self) -> &DMatrix<f64> {
        &self.l_t
    }

    pub fn q_t(&self) -> &DMatrix<f64> {
        &self.q_t
    }

    pub fn q_s(&self) -> &OpRef {
        &self.q_s
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `M = L_tᵀ V_t`; the posterior couples times through `M ⊗ I`.
    pub fn temporal_mixing(&self) -> DMatrix<f64> {
        self.l_t.transpose() * &self.v_t
    }

    /// Data `B R_t^{-1/2} u_i` of subproblem `i` (empty when `σ_i = 0`).
    pub fn subproblem_data(&self, i: usize) -> &[f64] {
        &self.rhs[i]
    }

    /// Map a space-time field into subproblem coordinates:
    /// `Ŝ = (S − μ) L_t⁻¹ V_t`, column `i` being subproblem `i`'s unknown.
    pub fn to_subproblem_space(&self, s: &[f64]) -> Result<DMatrix<f64>> {
        let (n_s, n_t) = (self.n_s(), self.n_t());
        check_len("space-time field", n_s * n_t, s.len())?;
        let diff: Vec<f64> = s.iter().zip(&self.mean).map(|(s, m)| s - m).collect();
        let sm = DMatrix::from_vec(n_s, n_t, diff);
        // Y = S L_t⁻¹  ⇔  L_tᵀ Yᵀ = Sᵀ
        let yt = self
            .l_t
            .transpose()
            .solve_lower_triangular(&sm.transpose())
            .ok_or_else(|| Error::Degenerate("singular temporal factor".into()))?;
        Ok(yt.transpose() * &self.v_t)
    }

    fn spatial_prior(&self) -> Result<PriorModel> {
        PriorModel::general(self.q_s.clone(), self.n_s(), 1, None)
    }
}

/// One spatial subproblem's outcome. `z` is the transformed unknown with
/// spatial reconstruction `Q_s z`.
#[derive(Clone, Debug)]
pub struct SubproblemSolution {
    pub index: usize,
    pub sigma: f64,
    pub z: Vec<f64>,
    pub lambda: f64,
    pub stop_reason: Option<StopReason>,
    pub records: Vec<IterationRecord>,
    pub factorization: Option<GenGkFactorization>,
}

impl SubproblemSolution {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

fn localize(strategy: &RegStrategy, plan: &DecoupledPlan, i: usize) -> Result<RegStrategy> {
    Ok(match strategy {
        RegStrategy::Optimal(truth) => {
            let t = plan.to_subproblem_space(truth)?;
            RegStrategy::Optimal(t.column(i).iter().copied().collect())
        }
        other => other.clone(),
    })
}

/// `min ½‖σ_i A_s Q_s z − B R_t^{-1/2} u_i‖²_{R_s⁻¹} + (λ²/2)‖z‖²_{Q_s}`
/// by genHyBR; `σ_i = 0` gives `z = 0` without solving.
pub fn solve_subproblem(plan: &DecoupledPlan, i: usize, strategy: &RegStrategy, options: &HybridOptions) -> Result<SubproblemSolution> {
    if i >= plan.n_t() {
        return Err(Error::param(format!("subproblem index {i} out of range for n_t = {}", plan.n_t())));
    }
    let sigma = plan.sigma[i];
    if sigma == 0.0 {
        return Ok(SubproblemSolution {
            index: i,
            sigma,
            z: vec![0.0; plan.n_s()],
            lambda: match strategy {
                RegStrategy::Fixed(l) => *l,
                _ => f64::NAN,
            },
            stop_reason: None,
            records: Vec::new(),
            factorization: None,
        });
    }
    let op = ScaledOperator::new(sigma, plan.a_s.clone());
    let prior = plan.spatial_prior()?;
    let strategy = localize(strategy, plan, i)?;
    let mut opts = options.clone();
    if let Some(t) = &options.truth {
        opts.truth = Some(plan.to_subproblem_space(t)?.column(i).iter().copied().collect());
    }
    opts.mask = None;
    let res = genhybr_solve(&op, &plan.r_s, &prior, &plan.rhs[i], &strategy, &opts)?;
    Ok(SubproblemSolution {
        index: i,
        sigma,
        z: res.x,
        lambda: res.lambda,
        stop_reason: Some(res.stop_reason),
        records: res.records,
        factorization: Some(res.factorization),
    })
}

/// `S = Q_s X Q_tᵀ` with `X = Z V_tᵀ L_t⁻ᵀ` (zero prior mean; add `μ` for
/// the full reconstruction).
pub fn recombine(plan: &DecoupledPlan, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n_s, n_t) = (plan.n_s(), plan.n_t());
    if z.shape() != (n_s, n_t) {
        return Err(Error::Shape {
            context: "recombine",
            expected: n_s * n_t,
            got: z.len(),
        });
    }
    // X L_tᵀ = Z V_tᵀ  ⇔  L_t Xᵀ = V_t Zᵀ
    let xt = plan
        .l_t
        .solve_upper_triangular(&(&plan.v_t * z.transpose()))
        .ok_or_else(|| Error::Degenerate("singular temporal factor".into()))?;
    let x = xt.transpose();
    let mut qx = DMatrix::zeros(n_s, n_t);
    let mut col = vec![0.0; n_s];
    for j in 0..n_t {
        plan.q_s.apply_to(x.column(j).as_slice(), &mut col);
        qx.column_mut(j).copy_from_slice(&col);
    }
    Ok(qx * plan.q_t.transpose())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaMode {
    /// One λ for all subproblems: the strategy runs on the subproblem with
    /// the largest `σ_i` and its λ is reused as a fixed value elsewhere.
    #[default]
    Shared,
    /// Each subproblem selects its own λ.
    PerTime,
}

#[derive(Clone, Debug, Default)]
pub struct DecoupledOptions {
    pub lambda_mode: LambdaMode,
    pub hybrid: HybridOptions,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct DecoupledResult {
    /// `n_s x n_t`, column `i` is `z_i`.
    pub z: DMatrix<f64>,
    /// Reconstruction including the prior mean, `n_s x n_t`.
    pub s: DMatrix<f64>,
    pub subproblems: Vec<SubproblemSolution>,
    /// Subproblems that failed, with the error text; their `z_i` is zero.
    pub failures: Vec<(usize, String)>,
    pub shared_lambda: Option<f64>,
}

impl DecoupledResult {
    pub fn s_vec(&self) -> Vec<f64> {
        self.s.as_slice().to_vec()
    }

    pub fn per_time_lambda(&self) -> Vec<f64> {
        self.subproblems.iter().map(|s| s.lambda).collect()
    }

    pub fn per_time_iters(&self) -> Vec<usize> {
        self.subproblems.iter().map(|s| s.iterations()).collect()
    }
}

/// Run every subproblem (in parallel) and recombine.
pub fn solve_decoupled(plan: &DecoupledPlan, strategy: &RegStrategy, options: &DecoupledOptions) -> Result<DecoupledResult> {
    strategy.validate()?;
    if let Some(t) = &options.hybrid.truth {
        check_len("true solution", plan.n_s() * plan.n_t(), t.len())?;
    }
    let run = || solve_all(plan, strategy, options);
    match options.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::param(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

fn solve_all(plan: &DecoupledPlan, strategy: &RegStrategy, options: &DecoupledOptions) -> Result<DecoupledResult> {
    let n_t = plan.n_t();
    let mut shared_lambda = None;
    let mut first: Option<Result<SubproblemSolution>> = None;
    let per_strategy = match (options.lambda_mode, strategy) {
        (LambdaMode::Shared, RegStrategy::Fixed(l)) => {
            shared_lambda = Some(*l);
            strategy.clone()
        }
        (LambdaMode::Shared, _) if plan.sigma[0] > 0.0 => {
            let sol = solve_subproblem(plan, 0, strategy, &options.hybrid)?;
            shared_lambda = Some(sol.lambda);
            let fixed = RegStrategy::Fixed(sol.lambda);
            first = Some(Ok(sol));
            fixed
        }
        _ => strategy.clone(),
    };

    let skip = usize::from(first.is_some());
    let mut outcomes: Vec<Result<SubproblemSolution>> = (skip..n_t)
        .into_par_iter()
        .map(|i| solve_subproblem(plan, i, &per_strategy, &options.hybrid))
        .collect();
    if let Some(f) = first {
        outcomes.insert(0, f);
    }

    let n_s = plan.n_s();
    let mut z = DMatrix::zeros(n_s, n_t);
    let mut subproblems = Vec::with_capacity(n_t);
    let mut failures = Vec::new();
    for (i, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(sol) => {
                z.column_mut(i).copy_from_slice(&sol.z);
                subproblems.push(sol);
            }
            Err(e) => {
                failures.push((i, e.to_string()));
                subproblems.push(SubproblemSolution {
                    index: i,
                    sigma: plan.sigma[i],
                    z: vec![0.0; n_s],
                    lambda: f64::NAN,
                    stop_reason: None,
                    records: Vec::new(),
                    factorization: None,
                });
            }
        }
    }
    let mut s = recombine(plan, &z)?;
    s.iter_mut().zip(&plan.mean).for_each(|(s, m)| *s += m);
    Ok(DecoupledResult {
        z,
        s,
        subproblems,
        failures,
        shared_lambda,
    })
}

/// Per-subproblem convergence logs in one CSV: `time_index`, `sigma_i`,
/// `lambda_i`, then the hybrid columns.
pub fn write_decoupled_log(path: impl AsRef<Path>, result: &DecoupledResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["time_index", "sigma_i", "lambda_i"];
    header.extend(CONVERGENCE_HEADER);
    w.write_record(&header)?;
    for sol in &result.subproblems {
        for rec in &sol.records {
            let mut row = vec![sol.index.to_string(), format!("{:?}", sol.sigma), format!("{:?}", sol.lambda)];
            row.extend(rec.csv_fields());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
