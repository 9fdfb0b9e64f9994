//! Kernel policy iteration with greedy center selection.
//!
//! Each policy-evaluation step is a generalized minimal-norm interpolation
//! of the GHJB data at the centers; each policy-improvement step applies
//! the feedback map to the surrogate gradient. Centers are chosen once,
//! in the first iteration, by a residual-driven greedy sweep over a
//! candidate pool, and stay frozen afterwards. A-posteriori inequality
//! checks (positivity or two-sided quadratic bounds) run every iteration
//! and are recorded, never fatal: a violation flags a bad run, it does
//! not define one.
//!
//! No separate Gauss–Newton path exists on purpose: solving the
//! linearized equality system without inequality constraints and checking
//! feasibility afterwards IS one unconstrained Gauss–Newton step on the
//! underlying recovery objective, so the iteration below realizes both
//! views at once. The fixed-point tests exercise this equivalence.

use crate::functionals::FunctionalError;
use crate::kernels::Kernel;
use crate::ocp::{verify_inequalities, ControlProblem, VerificationMode, VerificationReport};
use crate::recovery::{
    interpolation_layout, solve_linear_recovery, JitterPolicy, RecoveryError, RecoveryReport,
    Surrogate,
};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

/// Directions with closed-loop norm below this violate the well-posedness
/// precondition of the policy-evaluation step.
const WELL_POSEDNESS_NORM: f64 = 1e-14;
/// Per-center GHJB residual tolerance checked after every jitter-free solve.
const PE_RESIDUAL_TOL: f64 = 1e-6;
/// Relative Cholesky-pivot floor for accepting a new greedy center: the
/// squared power-function value of the candidate functional divided by its
/// squared representer norm. Below this the candidate is numerically in
/// the span of the selected functionals and would only wreck conditioning.
const PIVOT_FLOOR: f64 = 1e-13;

#[derive(Debug, Error)]
pub enum PIError {
    #[error(
        "well-posedness violation: ‖f(x)+g(x)u(x)‖ = {norm:.3e} at center {center_index} \
         (the policy-evaluation functional degenerates)"
    )]
    WellPosedness { center_index: usize, norm: f64 },
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("candidate pool contains the origin or a zero-cost point at index {0}")]
    ZeroDenominator(usize),
    #[error("no admissible candidate remained in the pool")]
    PoolExhausted,
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
    #[error("zero reference energy on the test set")]
    ZeroReferenceEnergy,
    #[error("{source}")]
    Aborted {
        /// Whatever was computed before the failure; lets callers persist
        /// partial traces.
        history: Box<PIHistory>,
        source: Box<PIError>,
    },
}

/// Greedy center-selection configuration.
#[derive(Debug, Clone)]
pub struct GreedyConfig {
    /// Candidate centers, origin-free and pairwise distinct.
    pub candidate_pool: Vec<Vec<f64>>,
    pub max_centers: usize,
    /// Stop once the maximal relative GHJB residual drops below this.
    pub target_residual: f64,
    /// Candidates added per re-solve (1 = fully sequential selection).
    pub batch: usize,
}

impl GreedyConfig {
    pub fn new(candidate_pool: Vec<Vec<f64>>, max_centers: usize, target_residual: f64) -> Self {
        Self { candidate_pool, max_centers, target_residual, batch: 1 }
    }
}

/// Policy-iteration configuration.
#[derive(Debug, Clone)]
pub struct PIConfig {
    /// Stopping tolerance on the maximal center-value change.
    pub epsilon: f64,
    pub max_pi_iters: usize,
    pub verification_mode: VerificationMode,
    /// Points for the inequality check; the centers when absent.
    pub verification_points: Option<Vec<Vec<f64>>>,
    pub verification_tol: f64,
    pub jitter: JitterPolicy,
    /// Test points for the relative ℓ² error against the exact value
    /// function, when the problem provides one.
    pub test_points: Vec<Vec<f64>>,
}

impl PIConfig {
    pub fn new(epsilon: f64, max_pi_iters: usize, mode: VerificationMode) -> Self {
        assert!(epsilon > 0.0, "epsilon must be positive");
        Self {
            epsilon,
            max_pi_iters,
            verification_mode: mode,
            verification_points: None,
            verification_tol: 1e-9,
            jitter: JitterPolicy::Auto,
            test_points: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GreedyRecord {
    pub n_centers: usize,
    pub res_ghjb: f64,
}

#[derive(Debug, Clone)]
pub struct PIIterRecord {
    pub iter: usize,
    /// max over centers of |s_η(x) - s_{η-1}(x)|
    pub e_eta: f64,
    /// max relative GHJB residual under the initial policy on the pool
    pub res_ghjb: f64,
    /// relative ℓ² error against the exact value function, when available
    pub error_pi: Option<f64>,
    pub verification: VerificationReport,
    pub n_centers: usize,
    pub rkhs_norm: f64,
    pub jitter_used: f64,
}

#[derive(Debug, Clone, Default)]
pub struct PIHistory {
    pub greedy_trace: Vec<GreedyRecord>,
    pub iterations: Vec<PIIterRecord>,
    /// Pool indices dropped by the greedy loop, either for well-posedness
    /// (vanishing closed-loop direction) or numerical redundancy.
    pub skipped_candidates: Vec<usize>,
    /// True when the last iteration met the epsilon tolerance.
    pub converged: bool,
}

/// Result of a full greedy + policy-iteration run.
pub struct PIOutcome {
    pub surrogate: Surrogate,
    pub centers: Vec<Vec<f64>>,
    pub history: PIHistory,
}

/// The functional layout of one policy-evaluation step: the origin
/// constraint (omitted for kernels whose RKHS enforces it structurally)
/// followed by one closed-loop gradient functional per center.
///
/// Fails when some closed-loop direction f(x)+g(x)u vanishes, which would
/// make the associated functional zero and the Gram matrix singular.
pub fn build_pe_functionals(
    p: &ControlProblem,
    kernel: &Kernel,
    centers: &[Vec<f64>],
    u_vals: &[DVector<f64>],
) -> Result<crate::functionals::FunctionalSet, PIError> {
    assert_eq!(centers.len(), u_vals.len(), "one control per center");
    let mut dirs = Vec::with_capacity(centers.len());
    for (i, (c, u)) in centers.iter().zip(u_vals).enumerate() {
        let dir = p.closed_loop_direction(c, u);
        let norm = dir.norm();
        if norm < WELL_POSEDNESS_NORM {
            return Err(PIError::WellPosedness { center_index: i, norm });
        }
        dirs.push(dir);
    }
    Ok(interpolation_layout(kernel, centers, &dirs)?)
}

/// Solve the GHJB interpolation problem for fixed controls at the centers.
///
/// After every unregularized solve the recovered surrogate must actually
/// satisfy the GHJB at the centers; a failed check signals ill-conditioning
/// beyond what a successful factorization reveals, so the auto policy
/// escalates to a regularized solve instead of trusting the result.
pub fn policy_evaluation(
    p: &ControlProblem,
    kernel: &Kernel,
    centers: &[Vec<f64>],
    u_vals: &[DVector<f64>],
    jitter: JitterPolicy,
) -> Result<RecoveryReport, PIError> {
    let fs = build_pe_functionals(p, kernel, centers, u_vals)?;
    let mut targets = Vec::with_capacity(fs.len());
    if !kernel.vanishes_at_origin() {
        targets.push(0.0);
    }
    for (c, u) in centers.iter().zip(u_vals) {
        targets.push(-p.running_cost(c, u));
    }
    let targets = DVector::from_vec(targets);
    let report = solve_linear_recovery(&fs, &targets, kernel, jitter)?;

    if report.regularization_used > 0.0 {
        return Ok(report);
    }
    match residual_check(p, &report, centers, u_vals) {
        Ok(()) => Ok(report),
        Err((residual, tol)) => {
            if jitter != JitterPolicy::Auto {
                return Err(PIError::Recovery(RecoveryError::ResidualCheckFailed {
                    residual,
                    tol,
                }));
            }
            // same ladder the factorization fallback uses, on the
            // equilibrated (unit-diagonal) Gram
            for rung in [1e-13, 1e-11, 1e-9] {
                if let Ok(rep) =
                    solve_linear_recovery(&fs, &targets, kernel, JitterPolicy::Fixed(rung))
                {
                    return Ok(rep);
                }
            }
            Err(PIError::Recovery(RecoveryError::ResidualCheckFailed { residual, tol }))
        }
    }
}

fn residual_check(
    p: &ControlProblem,
    report: &RecoveryReport,
    centers: &[Vec<f64>],
    u_vals: &[DVector<f64>],
) -> Result<(), (f64, f64)> {
    let mut worst = (0.0f64, 1.0f64);
    for (c, u) in centers.iter().zip(u_vals) {
        let res = p.ghjb_residual(&report.surrogate.grad(c), u, c).abs();
        let tol = PE_RESIDUAL_TOL * (1.0 + p.state_cost(c).abs());
        if res / tol > worst.0 / worst.1 {
            worst = (res, tol);
        }
    }
    if worst.0 > worst.1 {
        Err(worst)
    } else {
        Ok(())
    }
}

/// The feedback law induced by a surrogate value function.
pub fn policy_improvement<'a>(
    p: &'a ControlProblem,
    s: &'a Surrogate,
) -> impl Fn(&[f64]) -> DVector<f64> + Sync + 'a {
    move |x: &[f64]| p.feedback(&s.grad(x), x)
}

/// Pointwise relative GHJB residual under the initial policy; the greedy
/// selection criterion and the training metric. The closed-loop direction
/// and the running cost (the denominator) are precomputed per point.
fn relative_residual(s: Option<&Surrogate>, x: &[f64], dir: &DVector<f64>, denom: f64) -> f64 {
    let grad_term = s.map_or(0.0, |s| s.grad_dot(x, dir.as_slice()));
    ((grad_term + denom) / denom).abs()
}

/// Per-pool precomputations under the fixed initial policy.
struct PoolData {
    dirs: Vec<DVector<f64>>,
    denoms: Vec<f64>,
    dir_norms: Vec<f64>,
}

fn precompute_pool(
    p: &ControlProblem,
    u0: &(dyn Fn(&[f64]) -> DVector<f64> + Sync),
    pool: &[Vec<f64>],
) -> Result<PoolData, PIError> {
    let mut dirs = Vec::with_capacity(pool.len());
    let mut denoms = Vec::with_capacity(pool.len());
    let mut dir_norms = Vec::with_capacity(pool.len());
    for (i, x) in pool.iter().enumerate() {
        let u = u0(x);
        let denom = p.running_cost(x, &u);
        if !(denom > 0.0) {
            return Err(PIError::ZeroDenominator(i));
        }
        let dir = p.closed_loop_direction(x, &u);
        dir_norms.push(dir.norm());
        dirs.push(dir);
        denoms.push(denom);
    }
    Ok(PoolData { dirs, denoms, dir_norms })
}

/// Gate that measures how much new information a candidate functional adds
/// relative to the selected ones: the squared power-function value (the
/// Schur complement against the current Gram, i.e. the next Cholesky
/// pivot), normalized by the candidate's squared representer norm.
struct PivotGate {
    fs: crate::functionals::FunctionalSet,
    chol_l: DMatrix<f64>,
    scale: DVector<f64>,
}

impl PivotGate {
    fn new(s: &Surrogate) -> Option<Self> {
        let fs = s.functionals().clone();
        let gram = fs.gram(s.kernel());
        let n = gram.nrows();
        let mut scale = DVector::zeros(n);
        for i in 0..n {
            let v: f64 = gram[(i, i)];
            if !(v > 0.0) {
                return None;
            }
            scale[i] = 1.0 / v.sqrt();
        }
        let mut scaled = gram;
        for i in 0..n {
            for j in 0..n {
                scaled[(i, j)] *= scale[i] * scale[j];
            }
        }
        // when even the equilibrated Gram will not factor, the gate cannot
        // judge novelty; callers fall back to accepting the candidate
        let chol = nalgebra::Cholesky::new(scaled)?;
        Some(Self { fs, chol_l: chol.l(), scale })
    }

    fn relative_pivot(&self, candidate: &crate::functionals::Functional, kernel: &Kernel) -> f64 {
        let self_norm_sq = candidate.gram_entry(candidate, kernel);
        if !(self_norm_sq > 0.0) {
            return 0.0;
        }
        let n = self.fs.len();
        let mut c = DVector::zeros(n);
        for (j, f) in self.fs.entries().iter().enumerate() {
            c[j] = candidate.gram_entry(f, kernel) * self.scale[j] / self_norm_sq.sqrt();
        }
        let y = self
            .chol_l
            .solve_lower_triangular(&c)
            .expect("triangular factor is nonsingular");
        (1.0 - y.norm_squared()).max(0.0)
    }
}

/// Residual-driven greedy selection: starting from the empty set (zero
/// surrogate), repeatedly add the candidate with the largest relative GHJB
/// residual, re-solving the policy evaluation after each batch. Candidates
/// whose closed-loop direction vanishes, or whose functional is numerically
/// inside the span of the selected ones (relative Cholesky pivot below
/// 1e-13), are skipped permanently; both would make the Gram singular.
pub fn greedy_select(
    p: &ControlProblem,
    kernel: &Kernel,
    u0: &(dyn Fn(&[f64]) -> DVector<f64> + Sync),
    gc: &GreedyConfig,
    jitter: JitterPolicy,
) -> Result<(Vec<Vec<f64>>, Vec<GreedyRecord>, Vec<usize>), PIError> {
    if gc.candidate_pool.is_empty() {
        return Err(PIError::EmptyPool);
    }
    let batch = gc.batch.max(1);
    let pool = &gc.candidate_pool;
    let data = precompute_pool(p, u0, pool)?;

    let mut dropped = vec![false; pool.len()];
    let mut remaining: Vec<usize> = (0..pool.len()).collect();
    let mut centers: Vec<Vec<f64>> = Vec::new();
    let mut u_at_centers: Vec<DVector<f64>> = Vec::new();
    let mut skipped: Vec<usize> = Vec::new();
    let mut trace: Vec<GreedyRecord> = Vec::new();
    let mut surrogate: Option<Surrogate> = None;

    loop {
        // residual sweep with the current surrogate
        let nus: Vec<f64> = remaining
            .par_iter()
            .map(|&i| relative_residual(surrogate.as_ref(), &pool[i], &data.dirs[i], data.denoms[i]))
            .collect();
        let res = nus.iter().fold(0.0f64, |m, v| m.max(*v));
        trace.push(GreedyRecord { n_centers: centers.len(), res_ghjb: res });

        if res <= gc.target_residual || centers.len() >= gc.max_centers || remaining.is_empty() {
            break;
        }

        // take up to `batch` admissible maximizers, lowest pool index on ties
        let mut order: Vec<usize> = (0..remaining.len()).collect();
        order.sort_by(|&a, &b| {
            nus[b]
                .partial_cmp(&nus[a])
                .expect("residuals are finite")
                .then(remaining[a].cmp(&remaining[b]))
        });
        let gate = surrogate.as_ref().and_then(PivotGate::new);
        let mut picked = Vec::new();
        for pos in order {
            if picked.len() >= batch || centers.len() + picked.len() >= gc.max_centers {
                break;
            }
            let idx = remaining[pos];
            if data.dir_norms[idx] < WELL_POSEDNESS_NORM {
                log::warn!(
                    "greedy: skipping candidate {idx} permanently (closed-loop direction norm {:.3e})",
                    data.dir_norms[idx]
                );
                skipped.push(idx);
                dropped[idx] = true;
                continue;
            }
            if let Some(gate) = &gate {
                let cand = crate::functionals::Functional::dir_grad(
                    pool[idx].clone(),
                    data.dirs[idx].as_slice().to_vec(),
                );
                let pivot = gate.relative_pivot(&cand, kernel);
                if pivot < PIVOT_FLOOR {
                    log::debug!(
                        "greedy: skipping candidate {idx} permanently (relative pivot {pivot:.3e})"
                    );
                    skipped.push(idx);
                    dropped[idx] = true;
                    continue;
                }
            }
            picked.push(idx);
        }
        for &idx in &picked {
            dropped[idx] = true;
        }
        remaining.retain(|i| !dropped[*i]);
        if picked.is_empty() {
            if remaining.is_empty() {
                break;
            }
            continue;
        }
        for idx in picked {
            centers.push(pool[idx].clone());
            u_at_centers.push(u0(&pool[idx]));
        }

        match policy_evaluation(p, kernel, &centers, &u_at_centers, jitter) {
            Ok(rep) => surrogate = Some(rep.surrogate),
            Err(source) => {
                let history = PIHistory {
                    greedy_trace: trace,
                    skipped_candidates: skipped,
                    ..Default::default()
                };
                return Err(PIError::Aborted {
                    history: Box::new(history),
                    source: Box::new(source),
                });
            }
        }
    }
    if centers.is_empty() {
        return Err(PIError::PoolExhausted);
    }
    Ok((centers, trace, skipped))
}

/// Full scheme: greedy selection under the initial policy, then policy
/// iteration on the frozen center set until the maximal center-value
/// change drops below epsilon.
pub fn run_rkhs_pi(
    p: &ControlProblem,
    kernel: &Kernel,
    u0: &(dyn Fn(&[f64]) -> DVector<f64> + Sync),
    gc: &GreedyConfig,
    pc: &PIConfig,
) -> Result<PIOutcome, PIError> {
    assert!(pc.epsilon > 0.0, "epsilon must be positive");
    let (centers, greedy_trace, skipped_candidates) =
        greedy_select(p, kernel, u0, gc, pc.jitter)?;

    log_rank_diagnostic(p, &centers);

    let pool_data = precompute_pool(p, u0, &gc.candidate_pool)?;
    let mut history = PIHistory {
        greedy_trace,
        skipped_candidates,
        ..Default::default()
    };

    let mut u_vals: Vec<DVector<f64>> = centers.iter().map(|c| u0(c)).collect();
    let mut prev_vals = DVector::zeros(centers.len());
    let mut surrogate: Option<Surrogate> = None;

    for iter in 0..pc.max_pi_iters.max(1) {
        if let Some(s) = &surrogate {
            for (u, c) in u_vals.iter_mut().zip(&centers) {
                *u = p.feedback(&s.grad(c), c);
            }
        }
        let report = match policy_evaluation(p, kernel, &centers, &u_vals, pc.jitter) {
            Ok(r) => r,
            Err(source) => {
                return Err(PIError::Aborted {
                    history: Box::new(history),
                    source: Box::new(source),
                })
            }
        };
        let s = report.surrogate;

        let vals = DVector::from_iterator(centers.len(), centers.iter().map(|c| s.eval(c)));
        let e_eta = (&vals - &prev_vals).abs().max();
        prev_vals = vals;

        let res = res_ghjb_with(&s, &gc.candidate_pool, &pool_data);
        let error_pi_val = if p.has_exact_ovf() && !pc.test_points.is_empty() {
            error_pi(
                |x| s.eval(x),
                |x| p.exact_ovf(x).expect("exact value function"),
                &pc.test_points,
            )
            .ok()
        } else {
            None
        };
        let verification_points = pc.verification_points.as_deref().unwrap_or(&centers);
        let verification = verify_inequalities(
            &s,
            verification_points,
            pc.verification_mode,
            pc.verification_tol,
        );
        if !verification.feasible {
            log::warn!(
                "iteration {iter}: inequality verification infeasible \
                 (lower {:.3e}, upper {:.3e})",
                verification.worst_lower_violation,
                verification.worst_upper_violation
            );
        }
        history.iterations.push(PIIterRecord {
            iter,
            e_eta,
            res_ghjb: res,
            error_pi: error_pi_val,
            verification,
            n_centers: centers.len(),
            rkhs_norm: report.rkhs_norm,
            jitter_used: report.regularization_used,
        });
        surrogate = Some(s);
        if e_eta <= pc.epsilon {
            history.converged = true;
            break;
        }
    }

    Ok(PIOutcome {
        surrogate: surrogate.expect("at least one iteration ran"),
        centers,
        history,
    })
}

/// Maximal relative GHJB residual under the initial policy over the
/// training points.
pub fn res_ghjb(
    p: &ControlProblem,
    s: &Surrogate,
    u0: &(dyn Fn(&[f64]) -> DVector<f64> + Sync),
    training_points: &[Vec<f64>],
) -> Result<f64, PIError> {
    let data = precompute_pool(p, u0, training_points)?;
    Ok(res_ghjb_with(s, training_points, &data))
}

fn res_ghjb_with(s: &Surrogate, points: &[Vec<f64>], data: &PoolData) -> f64 {
    let nus: Vec<f64> = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| relative_residual(Some(s), x, &data.dirs[i], data.denoms[i]))
        .collect();
    nus.iter().fold(0.0f64, |m, v| m.max(*v))
}

/// Relative ℓ² error of a prediction against a reference on a test set.
pub fn error_pi<P, R>(predict: P, reference: R, test_points: &[Vec<f64>]) -> Result<f64, PIError>
where
    P: Fn(&[f64]) -> f64 + Sync,
    R: Fn(&[f64]) -> f64 + Sync,
{
    let pairs: Vec<(f64, f64)> = test_points
        .par_iter()
        .map(|x| (predict(x), reference(x)))
        .collect();
    let num: f64 = pairs.iter().map(|(p, r)| (r - p) * (r - p)).sum();
    let den: f64 = pairs.iter().map(|(_, r)| r * r).sum();
    if den <= 0.0 {
        return Err(PIError::ZeroReferenceEnergy);
    }
    Ok((num / den).sqrt())
}

/// Numerical rank of [f(x) | g(x)] per center (singular values above
/// 1e-10·σ_max). The stronger rank condition wants M+1 everywhere; the
/// policy-evaluation step itself only needs nonzero closed-loop
/// directions, so shortfalls are logged, not enforced.
pub fn rank_diagnostic(p: &ControlProblem, centers: &[Vec<f64>]) -> Vec<usize> {
    centers
        .iter()
        .map(|c| {
            let f = p.drift(c);
            let g = p.control_matrix(c);
            let mut m = DMatrix::zeros(p.state_dim(), 1 + p.control_dim());
            m.set_column(0, &f);
            for j in 0..p.control_dim() {
                m.set_column(1 + j, &g.column(j).into_owned());
            }
            let svd = m.svd(false, false);
            let smax = svd.singular_values.max();
            if smax == 0.0 {
                0
            } else {
                svd.singular_values.iter().filter(|s| **s > 1e-10 * smax).count()
            }
        })
        .collect()
}

fn log_rank_diagnostic(p: &ControlProblem, centers: &[Vec<f64>]) {
    let want = (p.control_dim() + 1).min(p.state_dim());
    let ranks = rank_diagnostic(p, centers);
    let deficient = ranks.iter().filter(|r| **r < want).count();
    if deficient > 0 {
        log::warn!(
            "rank diagnostic: {deficient}/{} centers have rank [f|g] below {want}",
            centers.len()
        );
    } else {
        log::debug!("rank diagnostic: all {} centers at full rank {want}", centers.len());
    }
}
