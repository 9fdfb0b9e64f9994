//! Linear optimal recovery: generalized minimal-norm interpolation.
//!
//! Given functionals λ₁..λₙ and targets r, the minimal-norm interpolant is
//! `s = Σ αⱼ wⱼ` with `K_Λ α = r`, where `K_Λ` is the generalized Gram
//! matrix. The solve is a symmetric positive-definite factorization;
//! loss of positive definiteness is diagnostic, so no generic LU fallback
//! exists. A jitter ladder absorbs the severe ill-conditioning of Gaussian
//! Gram matrices at small shape parameters, and the amount used is
//! recorded in every report.

use crate::functionals::{Functional, FunctionalSet};
use crate::kernels::Kernel;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecoveryError {
    #[error("target vector has {0} entries but the functional set has {1}")]
    SizeMismatch(usize, usize),
    #[error("non-finite entry in target vector")]
    NonFiniteTargets,
    #[error(
        "Gram factorization failed even at maximum jitter {max_jitter:.3e}; \
         the functional family is numerically degenerate (rank condition violated?)"
    )]
    FactorizationFailed { max_jitter: f64 },
    #[error("Gram matrix is singular (jitter-free solve requested)")]
    SingularGram,
    #[error(
        "interpolation residual {residual:.3e} exceeds tolerance {tol:.3e} at zero jitter"
    )]
    ResidualCheckFailed { residual: f64, tol: f64 },
}

/// Regularization policy for the SPD solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JitterPolicy {
    /// Jitter-free solve; fail if the factorization does not go through.
    None,
    /// Start at zero, escalate through {1e-13, 1e-11, 1e-9}·trace(K)/n.
    Auto,
    /// Fixed absolute jitter, no escalation.
    Fixed(f64),
}

impl JitterPolicy {
    /// The ladder of jitter values to attempt, relative to the mean
    /// diagonal entry of the (equilibrated) Gram matrix.
    fn ladder(&self, gram: &DMatrix<f64>) -> Vec<f64> {
        match self {
            JitterPolicy::None => vec![0.0],
            JitterPolicy::Fixed(j) => vec![*j],
            JitterPolicy::Auto => {
                let scale = gram.trace() / gram.nrows() as f64;
                let mut l = vec![0.0];
                l.extend([1e-13, 1e-11, 1e-9].iter().map(|f| f * scale));
                l
            }
        }
    }
}

/// Symmetric Jacobi equilibration: returns D with unit-diagonal D·K·D.
/// Representer norms vary over orders of magnitude (gradient functionals
/// scale with their closed-loop direction), and the rescaling cuts the
/// condition number accordingly without changing the interpolant.
fn equilibration(gram: &DMatrix<f64>) -> Option<DVector<f64>> {
    let mut d = DVector::zeros(gram.nrows());
    for i in 0..gram.nrows() {
        let v = gram[(i, i)];
        if !(v > 0.0) {
            return None; // zero representer: guaranteed singular
        }
        d[i] = 1.0 / v.sqrt();
    }
    Some(d)
}

impl std::str::FromStr for JitterPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(JitterPolicy::None),
            "auto" => Ok(JitterPolicy::Auto),
            other => other
                .parse::<f64>()
                .map_err(|_| format!("invalid jitter policy '{other}' (none | auto | <value>)"))
                .and_then(|v| {
                    if v >= 0.0 {
                        Ok(JitterPolicy::Fixed(v))
                    } else {
                        Err(format!("jitter must be nonnegative, got {v}"))
                    }
                }),
        }
    }
}

/// A finite kernel expansion `s = Σ αⱼ wⱼ` over Riesz representers.
#[derive(Debug, Clone)]
pub struct Surrogate {
    kernel: Kernel,
    functionals: FunctionalSet,
    coefficients: DVector<f64>,
}

impl Surrogate {
    pub fn new(
        kernel: Kernel,
        functionals: FunctionalSet,
        coefficients: DVector<f64>,
    ) -> Self {
        assert_eq!(
            functionals.len(),
            coefficients.len(),
            "coefficient/functional length mismatch"
        );
        Self { kernel, functionals, coefficients }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn functionals(&self) -> &FunctionalSet {
        &self.functionals
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn dim(&self) -> usize {
        self.functionals.dim()
    }

    /// s(x) = Σ αⱼ wⱼ(x)
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.functionals
            .entries()
            .iter()
            .zip(self.coefficients.iter())
            .map(|(f, &a)| a * f.representer_value(&self.kernel, x))
            .sum()
    }

    /// ∇s(x)
    pub fn grad(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (f, &a) in self.functionals.entries().iter().zip(self.coefficients.iter()) {
            out += f.representer_gradient(&self.kernel, x) * a;
        }
        out
    }

    /// ⟨dir, ∇s(x)⟩ via fused kernel evaluators; the hot path of greedy
    /// sweeps and residual metrics.
    pub fn grad_dot(&self, x: &[f64], dir: &[f64]) -> f64 {
        self.functionals
            .entries()
            .iter()
            .zip(self.coefficients.iter())
            .map(|(f, &a)| a * f.representer_gradient_dot(&self.kernel, x, dir))
            .sum()
    }

    /// √(αᵀ K_Λ α); recomputes the Gram matrix.
    pub fn rkhs_norm(&self) -> f64 {
        let g = self.functionals.gram(&self.kernel);
        quad_form(&g, &self.coefficients).max(0.0).sqrt()
    }
}

/// Outcome of a linear recovery solve.
#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub surrogate: Surrogate,
    /// max_i |λ_i(s) - r_i|, recomputed by direct surrogate evaluation.
    pub max_constraint_violation: f64,
    pub rkhs_norm: f64,
    /// Absolute jitter added to the Gram diagonal (0 when none was needed).
    pub regularization_used: f64,
}

/// Solve the generalized minimal-norm interpolation problem
/// `min ‖s‖ s.t. λ_i(s) = r_i` by one SPD solve against the Gram matrix.
pub fn solve_linear_recovery(
    fs: &FunctionalSet,
    targets: &DVector<f64>,
    kernel: &Kernel,
    jitter: JitterPolicy,
) -> Result<RecoveryReport, RecoveryError> {
    if targets.len() != fs.len() {
        return Err(RecoveryError::SizeMismatch(targets.len(), fs.len()));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(RecoveryError::NonFiniteTargets);
    }

    let gram = fs.gram(kernel);
    let max_jitter = *jitter.ladder(&gram).last().expect("ladder is never empty");
    let d = equilibration(&gram)
        .ok_or(RecoveryError::FactorizationFailed { max_jitter })?;
    let mut scaled = gram.clone();
    for i in 0..scaled.nrows() {
        for j in 0..scaled.ncols() {
            scaled[(i, j)] *= d[i] * d[j];
        }
    }
    let scaled_targets = targets.component_mul(&d);

    let (chol, used) = factorize(&scaled, jitter)?;
    let coefficients = chol.solve(&scaled_targets).component_mul(&d);

    let norm = quad_form(&gram, &coefficients).max(0.0).sqrt();
    let surrogate = Surrogate::new(kernel.clone(), fs.clone(), coefficients);

    let applied = fs.apply(|x| surrogate.eval(x), |x| surrogate.grad(x));
    let max_constraint_violation = (applied - targets)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));

    Ok(RecoveryReport {
        surrogate,
        max_constraint_violation,
        rkhs_norm: norm,
        regularization_used: used,
    })
}

/// The finite-dimensional recovery objective `zᵀ K_Λ⁻¹ z`, equal to the
/// squared norm of the minimal-norm interpolant of the data z.
pub fn finite_dim_objective(
    z: &DVector<f64>,
    fs: &FunctionalSet,
    kernel: &Kernel,
) -> Result<f64, RecoveryError> {
    if z.len() != fs.len() {
        return Err(RecoveryError::SizeMismatch(z.len(), fs.len()));
    }
    let gram = fs.gram(kernel);
    let d = equilibration(&gram).ok_or(RecoveryError::SingularGram)?;
    let mut scaled = gram;
    for i in 0..scaled.nrows() {
        for j in 0..scaled.ncols() {
            scaled[(i, j)] *= d[i] * d[j];
        }
    }
    let zs = z.component_mul(&d);
    let chol = Cholesky::new(scaled).ok_or(RecoveryError::SingularGram)?;
    Ok(zs.dot(&chol.solve(&zs)))
}

fn factorize(
    gram: &DMatrix<f64>,
    jitter: JitterPolicy,
) -> Result<(Cholesky<f64, Dyn>, f64), RecoveryError> {
    let ladder = jitter.ladder(gram);
    let max_jitter = *ladder.last().expect("ladder is never empty");
    for j in ladder {
        let mut m = gram.clone();
        if j > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += j;
            }
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok((chol, j));
        }
    }
    Err(RecoveryError::FactorizationFailed { max_jitter })
}

fn quad_form(g: &DMatrix<f64>, a: &DVector<f64>) -> f64 {
    a.dot(&(g * a))
}

/// Build the functional layout used by policy evaluation: the origin
/// constraint first (omitted for kernels that vanish there, where it is the
/// zero functional), followed by one gradient functional per center.
pub fn interpolation_layout(
    kernel: &Kernel,
    centers: &[Vec<f64>],
    directions: &[DVector<f64>],
) -> Result<FunctionalSet, crate::functionals::FunctionalError> {
    assert_eq!(centers.len(), directions.len());
    let dim = centers.first().map(|c| c.len()).unwrap_or(0);
    let mut entries = Vec::with_capacity(centers.len() + 1);
    if !kernel.vanishes_at_origin() {
        entries.push(Functional::point(vec![0.0; dim]));
    }
    for (c, d) in centers.iter().zip(directions) {
        entries.push(Functional::dir_grad(c.clone(), d.as_slice().to_vec()));
    }
    FunctionalSet::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sq2() -> f64 {
        2.0f64.sqrt()
    }

    #[test]
    fn zero_targets_give_zero_interpolant() {
        let fs = FunctionalSet::new(vec![Functional::point(vec![0.0])]).unwrap();
        let r = DVector::from_column_slice(&[0.0]);
        let rep = solve_linear_recovery(&fs, &r, &Kernel::gaussian(1.0), JitterPolicy::None)
            .unwrap();
        assert_eq!(rep.surrogate.coefficients()[0], 0.0);
        assert_eq!(rep.rkhs_norm, 0.0);
        assert_eq!(rep.regularization_used, 0.0);
    }

    #[test]
    fn one_by_one_system_closed_form() {
        // k(0,0) = 1, r = 2: α = 2, s(0) = 2, norm 2
        let fs = FunctionalSet::new(vec![Functional::point(vec![0.0])]).unwrap();
        let r = DVector::from_column_slice(&[2.0]);
        let rep =
            solve_linear_recovery(&fs, &r, &Kernel::gaussian(1.0), JitterPolicy::None).unwrap();
        assert!((rep.surrogate.coefficients()[0] - 2.0).abs() < 1e-15);
        assert!((rep.surrogate.eval(&[0.0]) - 2.0).abs() < 1e-15);
        assert!((rep.rkhs_norm - 2.0).abs() < 1e-15);
        assert!(rep.max_constraint_violation < 1e-15);
    }

    #[test]
    fn lqr_ghjb_targets_are_reproduced_on_three_centers() {
        // Planar problem with f = x, g = I, h = ‖x‖², R = I; the optimal
        // value function is v(x) = (1+√2)‖x‖² and u(x) = -(1+√2)x.
        let p_star = 1.0 + sq2();
        let centers = [vec![0.4, 0.1], vec![-0.3, 0.5], vec![0.2, -0.6]];
        let kernel = Kernel::gaussian(1.0);
        let mut entries = vec![Functional::point(vec![0.0, 0.0])];
        let mut targets = vec![0.0];
        for c in &centers {
            // closed-loop direction f + g·u = (1 - (1+√2))·x = -√2·x
            let dir: Vec<f64> = c.iter().map(|v| -sq2() * v).collect();
            entries.push(Functional::dir_grad(c.clone(), dir));
            let h: f64 = c.iter().map(|v| v * v).sum();
            let uu: f64 = p_star * p_star * h; // ‖u‖² with R = I
            targets.push(-h - uu);
        }
        let fs = FunctionalSet::new(entries).unwrap();
        let rep = solve_linear_recovery(
            &fs,
            &DVector::from_vec(targets),
            &kernel,
            JitterPolicy::None,
        )
        .unwrap();
        // GHJB residuals at the centers, recomputed from the surrogate
        for c in &centers {
            let dir: Vec<f64> = c.iter().map(|v| -sq2() * v).collect();
            let h: f64 = c.iter().map(|v| v * v).sum();
            let uu = p_star * p_star * h;
            let res = rep.surrogate.grad_dot(c, &dir) + h + uu;
            assert!(res.abs() < 1e-10, "GHJB residual {res}");
        }
        assert!(rep.max_constraint_violation < 1e-10);
    }

    #[test]
    fn surrogate_eval_of_single_representer_is_kernel_section() {
        let kernel = Kernel::gaussian(0.7);
        let x0 = vec![0.3, -0.8];
        let fs = FunctionalSet::new(vec![Functional::point(x0.clone())]).unwrap();
        let s = Surrogate::new(kernel.clone(), fs, DVector::from_column_slice(&[1.0]));
        for y in [[0.0, 0.0], [0.5, 0.5], [-1.0, 0.2]] {
            assert_eq!(s.eval(&y), kernel.eval(&x0, &y));
        }
    }

    #[test]
    fn quad_kernel_surrogates_vanish_at_origin() {
        let kernel = Kernel::gaussian_quad(1.3);
        let fs = FunctionalSet::new(vec![
            Functional::dir_grad(vec![0.4, 0.2], vec![1.0, 0.0]),
            Functional::point(vec![-0.5, 0.9]),
        ])
        .unwrap();
        let s = Surrogate::new(kernel, fs, DVector::from_column_slice(&[2.0, -3.0]));
        assert_eq!(s.eval(&[0.0, 0.0]), 0.0);
        assert_eq!(s.grad(&[0.0, 0.0]).norm(), 0.0);
    }

    #[test]
    fn surrogate_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kernel = Kernel::linear_matern_quad(0.9);
        let fs = FunctionalSet::new(vec![
            Functional::dir_grad(vec![0.4, 0.2], vec![1.0, -0.5]),
            Functional::dir_grad(vec![-0.3, 0.7], vec![0.2, 1.0]),
            Functional::point(vec![0.8, 0.8]),
        ])
        .unwrap();
        let s = Surrogate::new(
            kernel,
            fs,
            DVector::from_column_slice(&[0.7, -1.1, 0.4]),
        );
        for _ in 0..10 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0f64)).collect();
            let g = s.grad(&x);
            let h = 1e-5;
            for c in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                let fd = (s.eval(&xp) - s.eval(&xm)) / (2.0 * h);
                assert!(
                    (g[c] - fd).abs() < 1e-5 * (1.0 + fd.abs()),
                    "component {c}: {} vs {fd}",
                    g[c]
                );
            }
            // fused directional derivative agrees with the assembled gradient
            let dir: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0f64)).collect();
            let gd = s.grad_dot(&x, &dir);
            let reference = g.dot(&DVector::from_column_slice(&dir));
            assert!((gd - reference).abs() < 1e-12);
        }
    }

    #[test]
    fn minimal_norm_identity_dual_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let kernel = Kernel::gaussian(1.0);
        for _ in 0..20 {
            let n = rng.gen_range(2..10usize);
            let mut entries = vec![Functional::point(vec![0.0, 0.0])];
            for _ in 1..n {
                let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0f64)).collect();
                let a: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0f64)).collect();
                if a.iter().map(|v| v * v).sum::<f64>() > 1e-2 {
                    entries.push(Functional::dir_grad(x, a));
                }
            }
            let fs = FunctionalSet::new(entries).unwrap();
            let r = DVector::from_iterator(fs.len(), (0..fs.len()).map(|_| rng.gen_range(-1.0..1.0)));
            let rep =
                solve_linear_recovery(&fs, &r, &kernel, JitterPolicy::None).unwrap();
            let obj = finite_dim_objective(&r, &fs, &kernel).unwrap();
            let n2 = rep.rkhs_norm * rep.rkhs_norm;
            assert!(
                (n2 - obj).abs() <= 1e-10 * (1.0 + obj.abs()),
                "norm² {n2} vs objective {obj}"
            );
        }
    }

    #[test]
    fn finite_dim_objective_closed_forms() {
        let fs = FunctionalSet::new(vec![Functional::point(vec![0.0])]).unwrap();
        let k = Kernel::gaussian(1.0);
        assert_eq!(
            finite_dim_objective(&DVector::from_column_slice(&[0.0]), &fs, &k).unwrap(),
            0.0
        );
        let v = finite_dim_objective(&DVector::from_column_slice(&[3.0]), &fs, &k).unwrap();
        assert!((v - 9.0).abs() < 1e-14);
    }

    #[test]
    fn interpolation_reproduces_generating_surrogate() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let kernel = Kernel::gaussian(1.0);
        let mut entries = vec![Functional::point(vec![0.0, 0.0])];
        for _ in 0..8 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0f64)).collect();
            let a: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0f64)).collect();
            entries.push(Functional::dir_grad(x, a));
        }
        let fs = FunctionalSet::new(entries).unwrap();
        let alpha =
            DVector::from_iterator(fs.len(), (0..fs.len()).map(|_| rng.gen_range(-1.0..1.0)));
        let s0 = Surrogate::new(kernel.clone(), fs.clone(), alpha.clone());

        let gram = fs.gram(&kernel);
        let cond = {
            let eig = gram.symmetric_eigenvalues();
            eig.max() / eig.min().max(f64::MIN_POSITIVE)
        };
        if cond > 1e12 {
            return; // conditioning does not permit a meaningful check
        }
        let targets = fs.apply(|x| s0.eval(x), |x| s0.grad(x));
        let rep = solve_linear_recovery(&fs, &targets, &kernel, JitterPolicy::None).unwrap();
        let diff = (rep.surrogate.coefficients() - &alpha).abs().max();
        assert!(diff < 1e-8, "coefficient drift {diff} at condition {cond:.2e}");
    }

    #[test]
    fn nested_constraint_norm_monotonicity() {
        // Generate targets from one fixed function (a kernel expansion) and
        // solve on nested functional subsets: the norm can only grow.
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let kernel = Kernel::gaussian(0.8);
        let mut entries = vec![Functional::point(vec![0.0, 0.0])];
        for _ in 0..12 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0f64)).collect();
            let a: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0f64)).collect();
            entries.push(Functional::dir_grad(x, a));
        }
        let generator = Surrogate::new(
            kernel.clone(),
            FunctionalSet::new(vec![
                Functional::point(vec![0.35, 0.15]),
                Functional::point(vec![-0.25, 0.45]),
            ])
            .unwrap(),
            DVector::from_column_slice(&[1.0, -0.7]),
        );

        let mut prev_norm = 0.0;
        for take in [4usize, 8, 13] {
            let sub = FunctionalSet::new(entries[..take].to_vec()).unwrap();
            let targets = sub.apply(|x| generator.eval(x), |x| generator.grad(x));
            let rep =
                solve_linear_recovery(&sub, &targets, &kernel, JitterPolicy::None).unwrap();
            assert!(
                rep.rkhs_norm >= prev_norm - 1e-10,
                "norm decreased: {} -> {}",
                prev_norm,
                rep.rkhs_norm
            );
            prev_norm = rep.rkhs_norm;
        }
    }

    #[test]
    fn jitter_ladder_reports_regularization() {
        // Two nearly coincident centers make the Gram numerically singular.
        let kernel = Kernel::gaussian(1.0);
        let fs = FunctionalSet::new(vec![
            Functional::point(vec![0.5, 0.5]),
            Functional::point(vec![0.5 + 1e-13, 0.5]),
        ])
        .unwrap();
        let r = DVector::from_column_slice(&[1.0, 1.0]);
        let rep = solve_linear_recovery(&fs, &r, &kernel, JitterPolicy::Auto).unwrap();
        assert!(rep.regularization_used > 0.0);
        // and the jitter-free policy refuses
        let err = solve_linear_recovery(&fs, &r, &kernel, JitterPolicy::None).unwrap_err();
        assert!(matches!(err, RecoveryError::FactorizationFailed { .. }));
    }

    #[test]
    fn nan_targets_are_rejected() {
        let fs = FunctionalSet::new(vec![Functional::point(vec![0.0])]).unwrap();
        let err = solve_linear_recovery(
            &fs,
            &DVector::from_column_slice(&[f64::NAN]),
            &Kernel::gaussian(1.0),
            JitterPolicy::Auto,
        )
        .unwrap_err();
        assert!(matches!(err, RecoveryError::NonFiniteTargets));
    }

    #[test]
    fn jitter_policy_parses() {
        assert_eq!("none".parse::<JitterPolicy>().unwrap(), JitterPolicy::None);
        assert_eq!("auto".parse::<JitterPolicy>().unwrap(), JitterPolicy::Auto);
        assert_eq!(
            "1e-10".parse::<JitterPolicy>().unwrap(),
            JitterPolicy::Fixed(1e-10)
        );
        assert!("-1".parse::<JitterPolicy>().is_err());
        assert!("bogus".parse::<JitterPolicy>().is_err());
    }
}
