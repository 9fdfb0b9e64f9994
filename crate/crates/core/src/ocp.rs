//! Control-affine infinite-horizon problems: HJB/GHJB residuals, the
//! optimal-feedback map, inequality verification, and closed-loop rollouts.

use crate::recovery::Surrogate;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// State-feedback law.
pub type Policy = Box<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;

type StateFn = Box<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;
type MatrixFn = Box<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Error)]
pub enum OcpError {
    #[error("invalid problem data: {0}")]
    InvalidData(String),
    #[error("state escaped the rollout region at t = {t:.6} (‖x‖ = {norm:.3e})")]
    StateEscaped { t: f64, norm: f64 },
    #[error("invalid rollout grid: horizon {horizon}, step {dt}")]
    InvalidRolloutGrid { horizon: f64, dt: f64 },
}

/// Axis-aligned box domain.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, OcpError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(OcpError::InvalidData("box bounds length mismatch".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(OcpError::InvalidData(
                "box lower bounds must be strictly below upper bounds".into(),
            ));
        }
        Ok(Self { lo, hi })
    }

    /// The cube [lo, hi]^n.
    pub fn cube(lo: f64, hi: f64, n: usize) -> Result<Self, OcpError> {
        Self::new(vec![lo; n], vec![hi; n])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    /// True once any coordinate is more than `factor` half-widths from the
    /// box center; the finite-time blow-up proxy for rollouts.
    pub fn escaped(&self, x: &[f64], factor: f64) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .any(|(v, (l, h))| {
                let c = 0.5 * (l + h);
                let hw = 0.5 * (h - l);
                !v.is_finite() || (v - c).abs() > factor * hw
            })
    }
}

/// The tuple (f, g, h, R, Ω) of a control-affine problem
/// ẋ = f(x) + g(x)u with running cost h(x) + ⟨u, Ru⟩.
pub struct ControlProblem {
    state_dim: usize,
    control_dim: usize,
    drift: StateFn,
    control_matrix: MatrixFn,
    state_cost: ScalarFn,
    control_weight: DMatrix<f64>,
    control_weight_chol: Cholesky<f64, Dyn>,
    domain: BoxDomain,
    exact_ovf: Option<ScalarFn>,
}

impl std::fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlProblem")
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .field("domain", &self.domain)
            .field("has_exact_ovf", &self.exact_ovf.is_some())
            .finish_non_exhaustive()
    }
}

impl ControlProblem {
    /// Validates f(0) = 0, h(0) = 0 with h > 0 on sampled points, and R
    /// symmetric positive definite.
    pub fn new(
        state_dim: usize,
        control_dim: usize,
        drift: StateFn,
        control_matrix: MatrixFn,
        state_cost: ScalarFn,
        control_weight: DMatrix<f64>,
        domain: BoxDomain,
        exact_ovf: Option<ScalarFn>,
    ) -> Result<Self, OcpError> {
        if domain.dim() != state_dim {
            return Err(OcpError::InvalidData(format!(
                "domain dimension {} does not match state dimension {}",
                domain.dim(),
                state_dim
            )));
        }
        if !domain.contains(&vec![0.0; state_dim]) {
            return Err(OcpError::InvalidData(
                "domain must contain the origin".into(),
            ));
        }
        let origin = vec![0.0; state_dim];
        let f0 = drift(&origin);
        if f0.len() != state_dim {
            return Err(OcpError::InvalidData("drift output dimension".into()));
        }
        if f0.amax() > 1e-12 {
            return Err(OcpError::InvalidData(format!(
                "f(0) must vanish, got max-abs {:.3e}",
                f0.amax()
            )));
        }
        let g0 = control_matrix(&origin);
        if g0.nrows() != state_dim || g0.ncols() != control_dim {
            return Err(OcpError::InvalidData(format!(
                "control matrix must be {}x{}, got {}x{}",
                state_dim,
                control_dim,
                g0.nrows(),
                g0.ncols()
            )));
        }
        if state_cost(&origin) != 0.0 {
            return Err(OcpError::InvalidData("h(0) must be zero".into()));
        }
        // positive-definiteness spot check on 100 sampled points
        let mut rng = ChaCha8Rng::seed_from_u64(0x6f63_7030);
        for _ in 0..100 {
            let x: Vec<f64> = domain
                .lo
                .iter()
                .zip(&domain.hi)
                .map(|(l, h)| rng.gen_range(*l..*h))
                .collect();
            if x.iter().map(|v| v * v).sum::<f64>() < 1e-18 {
                continue;
            }
            let hx = state_cost(&x);
            if !(hx > 0.0) {
                return Err(OcpError::InvalidData(format!(
                    "h must be positive away from the origin, got {hx} at a sampled point"
                )));
            }
        }
        if control_weight.nrows() != control_dim || control_weight.ncols() != control_dim {
            return Err(OcpError::InvalidData("control weight dimension".into()));
        }
        if (&control_weight - control_weight.transpose()).abs().max() > 1e-12 {
            return Err(OcpError::InvalidData(
                "control weight must be symmetric".into(),
            ));
        }
        let control_weight_chol = Cholesky::new(control_weight.clone()).ok_or_else(|| {
            OcpError::InvalidData("control weight must be positive definite".into())
        })?;
        Ok(Self {
            state_dim,
            control_dim,
            drift,
            control_matrix,
            state_cost,
            control_weight,
            control_weight_chol,
            domain,
            exact_ovf,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn drift(&self, x: &[f64]) -> DVector<f64> {
        (self.drift)(x)
    }

    pub fn control_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        (self.control_matrix)(x)
    }

    pub fn state_cost(&self, x: &[f64]) -> f64 {
        (self.state_cost)(x)
    }

    pub fn control_weight(&self) -> &DMatrix<f64> {
        &self.control_weight
    }

    pub fn exact_ovf(&self, x: &[f64]) -> Option<f64> {
        self.exact_ovf.as_ref().map(|v| v(x))
    }

    pub fn has_exact_ovf(&self) -> bool {
        self.exact_ovf.is_some()
    }

    /// u = -½ R⁻¹ gᵀ(x) ∇v(x), the pointwise Hamiltonian minimizer.
    pub fn feedback(&self, grad_v: &DVector<f64>, x: &[f64]) -> DVector<f64> {
        let gt = self.control_matrix(x).transpose();
        let mut u = gt * grad_v;
        self.control_weight_chol.solve_mut(&mut u);
        u * (-0.5)
    }

    /// ⟨u, Ru⟩
    pub fn control_cost(&self, u: &DVector<f64>) -> f64 {
        u.dot(&(&self.control_weight * u))
    }

    /// Running cost h(x) + ⟨u, Ru⟩.
    pub fn running_cost(&self, x: &[f64], u: &DVector<f64>) -> f64 {
        self.state_cost(x) + self.control_cost(u)
    }

    /// GHJB(v, u, x) = ⟨f + gu, ∇v⟩ + h + ⟨u, Ru⟩.
    pub fn ghjb_residual(&self, grad_v: &DVector<f64>, u: &DVector<f64>, x: &[f64]) -> f64 {
        let dir = self.closed_loop_direction(x, u);
        dir.dot(grad_v) + self.running_cost(x, u)
    }

    /// HJB(v, x) = ⟨f, ∇v⟩ - ¼‖gᵀ∇v‖²_{R⁻¹} + h; equals the GHJB residual
    /// at the feedback control by completing the square.
    pub fn hjb_residual(&self, grad_v: &DVector<f64>, x: &[f64]) -> f64 {
        let gt_grad = self.control_matrix(x).transpose() * grad_v;
        let rinv_gt_grad = self.control_weight_chol.solve(&gt_grad);
        self.drift(x).dot(grad_v) - 0.25 * gt_grad.dot(&rinv_gt_grad) + self.state_cost(x)
    }

    /// f(x) + g(x)u
    pub fn closed_loop_direction(&self, x: &[f64], u: &DVector<f64>) -> DVector<f64> {
        self.drift(x) + self.control_matrix(x) * u
    }
}

/// Inequality check mode for candidate value functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VerificationMode {
    /// v(x) ≥ 0
    Psd,
    /// α‖x‖² ≤ v(x) ≤ β‖x‖²
    QuadraticBounds { alpha: f64, beta: f64 },
}

/// Outcome of an inequality sweep; a report, never an abort.
#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub mode: VerificationMode,
    /// Worst shortfall below the lower bound (0 when none).
    pub worst_lower_violation: f64,
    /// Worst excess above the upper bound (0 when none).
    pub worst_upper_violation: f64,
    /// Up to 20 worst violating points, most severe first.
    pub violating_points: Vec<Vec<f64>>,
    pub feasible: bool,
}

/// Evaluate the surrogate at every point and report bound violations.
pub fn verify_inequalities(
    s: &Surrogate,
    points: &[Vec<f64>],
    mode: VerificationMode,
    tol: f64,
) -> VerificationReport {
    let mut worst_lower = 0.0f64;
    let mut worst_upper = 0.0f64;
    let mut violators: Vec<(f64, Vec<f64>)> = Vec::new();
    for x in points {
        let v = s.eval(x);
        let norm_sq: f64 = x.iter().map(|c| c * c).sum();
        let (lower, upper) = match mode {
            VerificationMode::Psd => (0.0, f64::INFINITY),
            VerificationMode::QuadraticBounds { alpha, beta } => {
                (alpha * norm_sq, beta * norm_sq)
            }
        };
        let lo_violation = (lower - v).max(0.0);
        let up_violation = if upper.is_finite() { (v - upper).max(0.0) } else { 0.0 };
        worst_lower = worst_lower.max(lo_violation);
        worst_upper = worst_upper.max(up_violation);
        let severity = lo_violation.max(up_violation);
        if severity > tol {
            violators.push((severity, x.clone()));
        }
    }
    violators.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    violators.truncate(20);
    VerificationReport {
        mode,
        worst_lower_violation: worst_lower,
        worst_upper_violation: worst_upper,
        violating_points: violators.into_iter().map(|(_, x)| x).collect(),
        feasible: worst_lower <= tol && worst_upper <= tol,
    }
}

/// Half-widths beyond which a rollout counts as escaped.
const ESCAPE_FACTOR: f64 = 10.0;
/// Early-exit radius: the cost tail below this is negligible for
/// continuous positive-definite running costs.
const EQUILIBRIUM_RADIUS: f64 = 1e-9;

/// Integrate ẋ = f(x) + g(x)·u_v(x) with classical fourth-order
/// Runge–Kutta, accumulating the running cost through the same stages, and
/// return (accumulated cost, ‖x(T)‖).
///
/// The gradient closure supplies ∇v for the feedback law; pass
/// `|x| s.grad(x)` to roll out a surrogate.
pub fn rollout_cost<G>(
    p: &ControlProblem,
    grad_v: G,
    x0: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<(f64, f64), OcpError>
where
    G: Fn(&[f64]) -> DVector<f64>,
{
    if !(dt > 0.0) || !(horizon > 0.0) {
        return Err(OcpError::InvalidRolloutGrid { horizon, dt });
    }
    let steps_f = horizon / dt;
    let steps = steps_f.round();
    if (steps_f - steps).abs() > 1e-9 * steps_f.max(1.0) || steps > 1e7 {
        return Err(OcpError::InvalidRolloutGrid { horizon, dt });
    }
    let steps = steps as u64;

    // augmented state (x, c): ẋ = f + g·u, ċ = h + ⟨u,Ru⟩
    let rhs = |x: &DVector<f64>| -> (DVector<f64>, f64) {
        let xs = x.as_slice();
        let u = p.feedback(&grad_v(xs), xs);
        (p.closed_loop_direction(xs, &u), p.running_cost(xs, &u))
    };

    let mut x = DVector::from_column_slice(x0);
    let mut cost = 0.0;
    for step in 0..steps {
        if p.domain.escaped(x.as_slice(), ESCAPE_FACTOR) {
            return Err(OcpError::StateEscaped { t: step as f64 * dt, norm: x.norm() });
        }
        if x.norm() < EQUILIBRIUM_RADIUS {
            return Ok((cost, x.norm()));
        }
        let (k1, c1) = rhs(&x);
        let (k2, c2) = rhs(&(&x + &k1 * (dt / 2.0)));
        let (k3, c3) = rhs(&(&x + &k2 * (dt / 2.0)));
        let (k4, c4) = rhs(&(&x + &k3 * dt));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        cost += (c1 + 2.0 * c2 + 2.0 * c3 + c4) * (dt / 6.0);
        if !cost.is_finite() {
            return Err(OcpError::StateEscaped { t: step as f64 * dt, norm: x.norm() });
        }
    }
    if p.domain.escaped(x.as_slice(), ESCAPE_FACTOR) {
        return Err(OcpError::StateEscaped { t: horizon, norm: x.norm() });
    }
    Ok((cost, x.norm()))
}
