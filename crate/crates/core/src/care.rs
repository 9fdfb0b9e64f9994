//! Continuous-time algebraic Riccati solver for LQR initialization and the
//! quadratic verification bounds.
//!
//! `AᵀP + PA - PBR⁻¹BᵀP + Q = 0` is solved by Newton–Kleinman: each step
//! solves a Lyapunov equation for the current closed loop. The Lyapunov
//! solver goes through the Kronecker-vectorized dense linear system, which
//! is the desk-scale limit of this module (state dimensions up to ~50).

use crate::ocp::{ControlProblem, Policy};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CareError {
    #[error("no stabilizing initial gain found (is (A,B) stabilizable?)")]
    NoStabilizingGain,
    #[error("Newton iteration stagnated with Riccati residual {residual:.3e} above tolerance {tol:.3e}")]
    Stagnated { residual: f64, tol: f64 },
    #[error("Lyapunov system is singular (closed-loop eigenvalues sum to zero in pairs)")]
    SingularLyapunov,
    #[error("computed solution is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("non-finite derivative while linearizing at the origin")]
    NonFiniteDerivative,
    #[error("invalid data: {0}")]
    InvalidData(String),
}

/// Linearization (A, B, Q, R) of a control problem at the origin.
#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl LinearizedSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self, CareError> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || q.nrows() != n || q.ncols() != n {
            return Err(CareError::InvalidData("matrix dimensions disagree".into()));
        }
        if r.nrows() != b.ncols() || r.ncols() != b.ncols() {
            return Err(CareError::InvalidData("control weight dimension".into()));
        }
        if (&q - q.transpose()).abs().max() > 1e-12 {
            return Err(CareError::InvalidData("Q must be symmetric".into()));
        }
        let q = symmetrize(&q);
        Ok(Self { a, b, q, r })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// Finite-difference linearization at the origin: A = Df(0) (central
/// differences, step 1e-6), B = g(0), Q = ½·Hessian of h at 0 (step 1e-4).
pub fn linearize(p: &ControlProblem) -> Result<LinearizedSystem, CareError> {
    let n = p.state_dim();
    let mut a = DMatrix::zeros(n, n);
    let step = 1e-6;
    let mut xp = vec![0.0; n];
    let mut xm = vec![0.0; n];
    for j in 0..n {
        xp[j] = step;
        xm[j] = -step;
        let col = (p.drift(&xp) - p.drift(&xm)) / (2.0 * step);
        a.set_column(j, &col);
        xp[j] = 0.0;
        xm[j] = 0.0;
    }
    let b = p.control_matrix(&vec![0.0; n]);

    let hstep = 1e-4;
    let mut hess = DMatrix::zeros(n, n);
    let mut x = vec![0.0; n];
    for i in 0..n {
        for j in i..n {
            let mut probe = |si: f64, sj: f64| {
                x[i] += si * hstep;
                x[j] += sj * hstep;
                let v = p.state_cost(&x);
                x[i] = 0.0;
                x[j] = 0.0;
                v
            };
            let v = (probe(1.0, 1.0) - probe(1.0, -1.0) - probe(-1.0, 1.0) + probe(-1.0, -1.0))
                / (4.0 * hstep * hstep);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    if a.iter().any(|v| !v.is_finite()) || hess.iter().any(|v| !v.is_finite()) {
        return Err(CareError::NonFiniteDerivative);
    }
    LinearizedSystem::new(a, b, symmetrize(&(hess * 0.5)), p.control_weight().clone())
}

/// Solve `FᵀX + XF = -W` through the Kronecker-vectorized linear system;
/// the output is symmetrized. Unique solvability requires that no two
/// eigenvalues of F sum to zero (guaranteed for Hurwitz F).
pub fn solve_lyapunov(f: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>, CareError> {
    let n = f.nrows();
    assert_eq!(f.ncols(), n, "F must be square");
    assert_eq!((w.nrows(), w.ncols()), (n, n), "W must match F");

    // vec(FᵀX + XF) = (I⊗Fᵀ + Fᵀ⊗I) vec(X), column-major vec
    let ft = f.transpose();
    let mut m = DMatrix::zeros(n * n, n * n);
    for col in 0..n {
        for row in 0..n {
            // block (col, col) accumulates I⊗Fᵀ
            for k in 0..n {
                m[(col * n + row, col * n + k)] += ft[(row, k)];
            }
            // Fᵀ⊗I contributes ft[(col, k)] on block-diagonal offsets
            for k in 0..n {
                m[(col * n + row, k * n + row)] += ft[(col, k)];
            }
        }
    }
    let rhs = DVector::from_iterator(n * n, w.iter().map(|v| -v));
    let lu = m.lu();
    let x = lu.solve(&rhs).ok_or(CareError::SingularLyapunov)?;
    let x = DMatrix::from_iterator(n, n, x.iter().copied());
    Ok(symmetrize(&x))
}

/// Result of a Newton–Kleinman solve.
#[derive(Debug, Clone)]
pub struct CareSolution {
    /// Symmetric positive-definite CARE solution.
    pub p: DMatrix<f64>,
    /// Frobenius norm of the Riccati residual per iteration.
    pub residuals: Vec<f64>,
}

/// Newton–Kleinman iteration for the CARE. Starts from a stabilizing gain
/// (zero when A is already Hurwitz, otherwise via Bass' construction) and
/// solves one closed-loop Lyapunov equation per step.
pub fn solve_care(
    sys: &LinearizedSystem,
    tol: f64,
    max_iter: usize,
) -> Result<CareSolution, CareError> {
    let r_chol = nalgebra::Cholesky::new(sys.r.clone())
        .ok_or_else(|| CareError::InvalidData("R must be positive definite".into()))?;
    let bt = sys.b.transpose();
    let rinv_bt = r_chol.solve(&bt);
    let threshold = tol * (1.0 + sys.q.norm());

    let mut k = initial_stabilizing_gain(sys, &rinv_bt)?;
    let mut residuals = Vec::new();
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for _ in 0..max_iter {
        let a_cl = &sys.a - &sys.b * &k;
        let w = &sys.q + k.transpose() * &sys.r * &k;
        let p = solve_lyapunov(&a_cl, &w)?;
        let res = riccati_residual(sys, &rinv_bt, &p);
        residuals.push(res);
        let improved = best.as_ref().map_or(true, |(b, _)| res < *b);
        if improved {
            best = Some((res, p.clone()));
        }
        if res < threshold {
            let p = best.expect("just set").1;
            if nalgebra::Cholesky::new(p.clone()).is_none() {
                return Err(CareError::NotPositiveDefinite);
            }
            return Ok(CareSolution { p, residuals });
        }
        if !improved && residuals.len() >= 3 {
            return Err(CareError::Stagnated { residual: res, tol: threshold });
        }
        k = &rinv_bt * &p;
    }
    Err(CareError::Stagnated {
        residual: *residuals.last().unwrap_or(&f64::INFINITY),
        tol: threshold,
    })
}

/// ‖AᵀP + PA - PBR⁻¹BᵀP + Q‖_F
pub fn riccati_residual_norm(sys: &LinearizedSystem, p: &DMatrix<f64>) -> f64 {
    let r_chol = nalgebra::Cholesky::new(sys.r.clone()).expect("R is SPD");
    let rinv_bt = r_chol.solve(&sys.b.transpose());
    riccati_residual(sys, &rinv_bt, p)
}

fn riccati_residual(
    sys: &LinearizedSystem,
    rinv_bt: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let at_p = sys.a.transpose() * p;
    let pbrb = p * &sys.b * rinv_bt * p;
    (&at_p + at_p.transpose() - pbrb + &sys.q).norm()
}

/// Zero when A is Hurwitz; otherwise Bass' construction: with
/// β = 1 + ‖A‖_F, solve (A + βI)W + W(A + βI)ᵀ = 2BR⁻¹Bᵀ and take
/// K = R⁻¹BᵀW⁻¹, which stabilizes any controllable pair.
fn initial_stabilizing_gain(
    sys: &LinearizedSystem,
    rinv_bt: &DMatrix<f64>,
) -> Result<DMatrix<f64>, CareError> {
    let n = sys.dim();
    let m = sys.b.ncols();
    if max_real_eigenvalue(&sys.a) < 0.0 {
        return Ok(DMatrix::zeros(m, n));
    }
    let beta = 1.0 + sys.a.norm();
    let shifted = &sys.a + DMatrix::identity(n, n) * beta;
    // (A+βI)W + W(A+βI)ᵀ = 2BR⁻¹Bᵀ  ⇔  FᵀW + WF = -(-2BR⁻¹Bᵀ) with F = (A+βI)ᵀ
    let rhs = &sys.b * rinv_bt * 2.0;
    let w = solve_lyapunov(&shifted.transpose(), &(-rhs))?;
    let w_lu = w.lu();
    let k = w_lu
        .solve(&rinv_bt.transpose())
        .ok_or(CareError::NoStabilizingGain)?
        .transpose();
    let a_cl = &sys.a - &sys.b * &k;
    if max_real_eigenvalue(&a_cl) >= 0.0 {
        return Err(CareError::NoStabilizingGain);
    }
    Ok(k)
}

pub fn max_real_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// (α, β) = (½λ_min(P), 2λ_max(P)), the quadratic verification constants.
pub fn lqr_bounds(p: &DMatrix<f64>) -> Result<(f64, f64), CareError> {
    let eig = symmetrize(p).symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 {
        return Err(CareError::NotPositiveDefinite);
    }
    Ok((0.5 * lo, 2.0 * hi))
}

/// The LQR law u(x) = -R⁻¹BᵀPx as a feedback closure.
pub fn lqr_feedback(sys: &LinearizedSystem, p: &DMatrix<f64>) -> Policy {
    let r_chol = nalgebra::Cholesky::new(sys.r.clone()).expect("R is SPD");
    let gain = r_chol.solve(&(sys.b.transpose() * p));
    Box::new(move |x: &[f64]| -(&gain * DVector::from_column_slice(x)))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_example() -> LinearizedSystem {
        let i = DMatrix::identity(2, 2);
        LinearizedSystem::new(i.clone(), i.clone(), i.clone(), i).unwrap()
    }

    #[test]
    fn lyapunov_diagonal_closed_forms() {
        // F = -I, W = 2I: X = I
        let f = -DMatrix::identity(3, 3);
        let w = DMatrix::identity(3, 3) * 2.0;
        let x = solve_lyapunov(&f, &w).unwrap();
        assert!((x - DMatrix::identity(3, 3)).abs().max() < 1e-12);

        // F = -aI: X = W/(2a)
        let a = 2.5;
        let f = -DMatrix::identity(2, 2) * a;
        let w = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 4.0]);
        let x = solve_lyapunov(&f, &w).unwrap();
        assert!((x - w / (2.0 * a)).abs().max() < 1e-12);
    }

    #[test]
    fn lyapunov_residual_on_random_hurwitz_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for n in [2usize, 4, 8] {
            for _ in 0..5 {
                // Hurwitz by diagonal dominance
                let mut f = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.3..0.3));
                for i in 0..n {
                    f[(i, i)] -= 2.0;
                }
                let mut c = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0f64));
                for i in 0..n {
                    c[(i, i)] += 2.0;
                }
                let w = &c * c.transpose(); // SPD
                let x = solve_lyapunov(&f, &w).unwrap();
                let resid = (f.transpose() * &x + &x * &f + &w).norm();
                assert!(resid < 1e-10 * w.norm().max(1.0), "residual {resid}");
                assert!((x.clone() - x.transpose()).abs().max() == 0.0);
            }
        }
    }

    #[test]
    fn care_identity_example_closed_form() {
        // A = B = Q = R = I₂: P = (1+√2)·I
        let sol = solve_care(&identity_example(), 1e-12, 50).unwrap();
        let expect = DMatrix::identity(2, 2) * (1.0 + 2.0f64.sqrt());
        assert!((&sol.p - expect).abs().max() < 1e-10);
    }

    #[test]
    fn care_scalar_closed_form() {
        // A=0, B=1, Q=1, R=1: positive root of -P² + 1 = 0 is P = 1
        let sys = LinearizedSystem::new(
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let sol = solve_care(&sys, 1e-12, 50).unwrap();
        assert!((sol.p[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn care_degenerates_to_lyapunov_without_control() {
        // Hurwitz A, B = 0: the quadratic term drops and P solves the
        // Lyapunov equation directly.
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.4, -0.2, -2.0]);
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let sys = LinearizedSystem::new(
            a.clone(),
            DMatrix::zeros(2, 1),
            q.clone(),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let sol = solve_care(&sys, 1e-12, 10).unwrap();
        let direct = solve_lyapunov(&a, &q).unwrap();
        assert!((&sol.p - direct).abs().max() < 1e-12);
        assert_eq!(sol.residuals.len(), 1);
    }

    #[test]
    fn newton_kleinman_residuals_decrease_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let n = 4;
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0f64));
            let b = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0f64));
            let q = DMatrix::identity(n, n);
            let r = DMatrix::identity(2, 2);
            let sys = LinearizedSystem::new(a, b, q, r).unwrap();
            let sol = match solve_care(&sys, 1e-10, 60) {
                Ok(s) => s,
                Err(CareError::NoStabilizingGain) => continue,
                Err(e) => panic!("unexpected failure: {e}"),
            };
            for w in sol.residuals.windows(2).skip(1) {
                assert!(
                    w[1] <= w[0] * 1.01,
                    "residuals not monotone: {:?}",
                    sol.residuals
                );
            }
        }
    }

    #[test]
    fn care_closed_loop_is_stable_and_residual_small() {
        let sys = identity_example();
        let sol = solve_care(&sys, 1e-12, 50).unwrap();
        assert!(riccati_residual_norm(&sys, &sol.p) < 1e-9 * (1.0 + sys.q.norm()));
        let r_chol = nalgebra::Cholesky::new(sys.r.clone()).unwrap();
        let k = r_chol.solve(&(sys.b.transpose() * &sol.p));
        let a_cl = &sys.a - &sys.b * k;
        assert!(max_real_eigenvalue(&a_cl) < 0.0);
    }

    #[test]
    fn lqr_bounds_closed_forms() {
        let c = 1.0 + 2.0f64.sqrt();
        let (alpha, beta) = lqr_bounds(&(DMatrix::identity(2, 2) * c)).unwrap();
        assert!((alpha - c / 2.0).abs() < 1e-14);
        assert!((beta - 2.0 * c).abs() < 1e-14);
        assert!((alpha - 1.2071067811865475).abs() < 1e-12);
        assert!((beta - 4.82842712474619).abs() < 1e-12);

        assert_eq!(lqr_bounds(&DMatrix::identity(3, 3)).unwrap(), (0.5, 2.0));
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]);
        assert_eq!(lqr_bounds(&p).unwrap(), (0.5, 8.0));
        assert!(lqr_bounds(&(-DMatrix::identity(2, 2))).is_err());
    }

    #[test]
    fn lqr_feedback_closed_form() {
        let sys = identity_example();
        let p = DMatrix::identity(2, 2) * (1.0 + 2.0f64.sqrt());
        let u = lqr_feedback(&sys, &p);
        assert_eq!(u(&[0.0, 0.0]).norm(), 0.0);
        let got = u(&[0.5, -0.25]);
        let c = 1.0 + 2.0f64.sqrt();
        assert!((got[0] + c * 0.5).abs() < 1e-14);
        assert!((got[1] - c * 0.25).abs() < 1e-14);

        // B = 0 gives the zero law
        let sys0 = LinearizedSystem::new(
            -DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let u0 = lqr_feedback(&sys0, &DMatrix::identity(2, 2));
        assert_eq!(u0(&[1.0, 1.0]).norm(), 0.0);
    }

    #[test]
    fn linearize_identity_example() {
        let p = crate::ocp::tests::unstable_lqr_problem();
        let sys = linearize(&p).unwrap();
        assert!((&sys.a - DMatrix::identity(2, 2)).abs().max() < 1e-6);
        assert!((&sys.b - DMatrix::identity(2, 2)).abs().max() < 1e-12);
        assert!((&sys.q - DMatrix::identity(2, 2)).abs().max() < 1e-6);
    }

    #[test]
    fn linearize_benchmark_problems() {
        let vdp = problems::vdp_problem().unwrap();
        let sys = linearize(&vdp.problem).unwrap();
        let expect_a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 1.0]);
        assert!((&sys.a - expect_a).abs().max() < 1e-6);

        let toy = problems::toy_problem().unwrap();
        let sys = linearize(&toy.problem).unwrap();
        let expect_a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, -0.5, -0.5]);
        assert!((&sys.a - expect_a).abs().max() < 1e-6);
        // g(0) = (0, sin 0)ᵀ = 0: the linearization carries no control authority
        assert_eq!(sys.b.abs().max(), 0.0);
    }
}
