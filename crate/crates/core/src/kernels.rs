//! Kernel families for the approximation space.
//!
//! Three families are supported: the Gaussian kernel
//! `exp(-(γ‖x-y‖)²)`, the linear Matérn kernel
//! `exp(-γ‖x-y‖)(1+γ‖x-y‖)`, and quadratic-product kernels
//! `⟨x,y⟩²·k̃(x,y)` built on top of either. Every family comes with
//! closed-form first-argument gradients and mixed Hessians
//! `∇₂∇₁k`, which are what gradient-type Riesz representers and
//! generalized Gram matrices are made of. Finite differences are used
//! only in tests; Gram assembly cannot tolerate FD noise.
//!
//! The quadratic-product kernels vanish together with their gradient at
//! the origin, so every member of their RKHS satisfies `ξ(0) = 0` and
//! `∇ξ(0) = 0` structurally.

use nalgebra::{DMatrix, DVector};

/// Radius below which the linear Matérn mixed Hessian switches to its
/// analytic limit (the factored form divides by r).
const MATERN_LIMIT_RADIUS: f64 = 1e-12;

/// A symmetric positive-definite kernel with analytic derivative evaluators.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// `k(x,y) = exp(-(γ‖x-y‖)²)`
    Gaussian { gamma: f64 },
    /// `k(x,y) = exp(-γ‖x-y‖)(1+γ‖x-y‖)` (Matérn with linear polynomial factor)
    LinearMatern { gamma: f64 },
    /// `k(x,y) = ⟨x,y⟩² · base(x,y)`
    QuadraticProduct { base: Box<Kernel> },
}

impl Kernel {
    pub fn gaussian(gamma: f64) -> Self {
        assert!(gamma > 0.0, "shape parameter must be positive, got {gamma}");
        Kernel::Gaussian { gamma }
    }

    pub fn linear_matern(gamma: f64) -> Self {
        assert!(gamma > 0.0, "shape parameter must be positive, got {gamma}");
        Kernel::LinearMatern { gamma }
    }

    pub fn quadratic_product(base: Kernel) -> Self {
        Kernel::QuadraticProduct { base: Box::new(base) }
    }

    pub fn gaussian_quad(gamma: f64) -> Self {
        Self::quadratic_product(Self::gaussian(gamma))
    }

    pub fn linear_matern_quad(gamma: f64) -> Self {
        Self::quadratic_product(Self::linear_matern(gamma))
    }

    /// Shape parameter of the (innermost) radial factor.
    pub fn gamma(&self) -> f64 {
        match self {
            Kernel::Gaussian { gamma } | Kernel::LinearMatern { gamma } => *gamma,
            Kernel::QuadraticProduct { base } => base.gamma(),
        }
    }

    /// True when every RKHS member satisfies v(0)=0 and ∇v(0)=0 by
    /// construction. Point evaluation at the origin is then the zero
    /// functional and must not enter a Gram matrix.
    pub fn vanishes_at_origin(&self) -> bool {
        matches!(self, Kernel::QuadraticProduct { .. })
    }

    /// k(x, y).
    ///
    /// Panics on dimension mismatch or non-finite input.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        check_points(x, y);
        self.eval_unchecked(x, y)
    }

    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Kernel::Gaussian { gamma } => radial_gaussian(*gamma).value(dist(x, y)),
            Kernel::LinearMatern { gamma } => radial_matern(*gamma).value(dist(x, y)),
            Kernel::QuadraticProduct { base } => {
                let d = dot(x, y);
                d * d * base.eval_unchecked(x, y)
            }
        }
    }

    /// ∇₁k(x, y), the gradient in the first argument.
    pub fn grad1(&self, x: &[f64], y: &[f64]) -> DVector<f64> {
        check_points(x, y);
        let mut out = DVector::zeros(x.len());
        self.grad1_acc(x, y, 1.0, &mut out);
        out
    }

    /// ∇₂k(x, y) = ∇₁k(y, x) by kernel symmetry.
    pub fn grad2(&self, x: &[f64], y: &[f64]) -> DVector<f64> {
        self.grad1(y, x)
    }

    /// ⟨a, ∇₁k(x, y)⟩ without materializing the gradient.
    pub fn grad1_dot(&self, x: &[f64], y: &[f64], a: &[f64]) -> f64 {
        check_points(x, y);
        assert_eq!(a.len(), x.len(), "direction dimension mismatch");
        self.grad1_dot_unchecked(x, y, a)
    }

    fn grad1_dot_unchecked(&self, x: &[f64], y: &[f64], a: &[f64]) -> f64 {
        match self {
            Kernel::Gaussian { gamma } => {
                let r = dist(x, y);
                radial_gaussian(*gamma).psi(r) * dot_diff(a, x, y)
            }
            Kernel::LinearMatern { gamma } => {
                let r = dist(x, y);
                radial_matern(*gamma).psi(r) * dot_diff(a, x, y)
            }
            Kernel::QuadraticProduct { base } => {
                // ∇₁(d²b) = 2d·b·y + d²·∇₁b with d = ⟨x,y⟩
                let d = dot(x, y);
                let b = base.eval_unchecked(x, y);
                2.0 * d * b * dot(a, y) + d * d * base.grad1_dot_unchecked(x, y, a)
            }
        }
    }

    fn grad1_acc(&self, x: &[f64], y: &[f64], w: f64, out: &mut DVector<f64>) {
        match self {
            Kernel::Gaussian { gamma } => {
                let r = dist(x, y);
                let c = w * radial_gaussian(*gamma).psi(r);
                for i in 0..x.len() {
                    out[i] += c * (x[i] - y[i]);
                }
            }
            Kernel::LinearMatern { gamma } => {
                let r = dist(x, y);
                let c = w * radial_matern(*gamma).psi(r);
                for i in 0..x.len() {
                    out[i] += c * (x[i] - y[i]);
                }
            }
            Kernel::QuadraticProduct { base } => {
                let d = dot(x, y);
                let b = base.eval_unchecked(x, y);
                let c = w * 2.0 * d * b;
                for i in 0..x.len() {
                    out[i] += c * y[i];
                }
                base.grad1_acc(x, y, w * d * d, out);
            }
        }
    }

    /// The mixed Hessian ∇₂∇₁k(x, y) with entry (s, l) = ∂²k/∂x_s∂y_l.
    ///
    /// Satisfies `hessian12(x, y) = hessian12(y, x)ᵀ` by kernel symmetry.
    pub fn hessian12(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        check_points(x, y);
        let n = x.len();
        let mut out = DMatrix::zeros(n, n);
        self.hessian12_acc(x, y, 1.0, &mut out);
        out
    }

    fn hessian12_acc(&self, x: &[f64], y: &[f64], w: f64, out: &mut DMatrix<f64>) {
        let n = x.len();
        match self {
            Kernel::Gaussian { gamma } => {
                let r = dist(x, y);
                let (c_id, c_zz) = radial_gaussian(*gamma).hess_coeffs(r);
                for s in 0..n {
                    let zs = x[s] - y[s];
                    for l in 0..n {
                        let zl = x[l] - y[l];
                        let mut v = c_zz * zs * zl;
                        if s == l {
                            v += c_id;
                        }
                        out[(s, l)] += w * v;
                    }
                }
            }
            Kernel::LinearMatern { gamma } => {
                let r = dist(x, y);
                let (c_id, c_zz) = radial_matern(*gamma).hess_coeffs(r);
                for s in 0..n {
                    let zs = x[s] - y[s];
                    for l in 0..n {
                        let zl = x[l] - y[l];
                        let mut v = c_zz * zs * zl;
                        if s == l {
                            v += c_id;
                        }
                        out[(s, l)] += w * v;
                    }
                }
            }
            Kernel::QuadraticProduct { base } => {
                // E_k = 2b·y xᵀ... entrywise:
                //   (E_k)_{sl} = 2 x_l y_s b + 2 d δ_{sl} b
                //              + 2 d y_s (∇₂b)_l + 2 d x_l (∇₁b)_s + d² (E_b)_{sl}
                let d = dot(x, y);
                let b = base.eval_unchecked(x, y);
                let g1 = base.grad1(x, y);
                let g2 = base.grad2(x, y);
                for s in 0..n {
                    for l in 0..n {
                        let mut v = 2.0 * x[l] * y[s] * b
                            + 2.0 * d * y[s] * g2[l]
                            + 2.0 * d * x[l] * g1[s];
                        if s == l {
                            v += 2.0 * d * b;
                        }
                        out[(s, l)] += w * v;
                    }
                }
                base.hessian12_acc(x, y, w * d * d, out);
            }
        }
    }

    /// Quadratic form ⟨a, ∇₂∇₁k(x,y)·c⟩ in O(N), the Gram entry between
    /// two gradient functionals.
    pub fn hessian12_form(&self, x: &[f64], y: &[f64], a: &[f64], c: &[f64]) -> f64 {
        check_points(x, y);
        assert_eq!(a.len(), x.len(), "direction dimension mismatch");
        assert_eq!(c.len(), x.len(), "direction dimension mismatch");
        self.hessian12_form_unchecked(x, y, a, c)
    }

    fn hessian12_form_unchecked(&self, x: &[f64], y: &[f64], a: &[f64], c: &[f64]) -> f64 {
        match self {
            Kernel::Gaussian { gamma } => {
                let r = dist(x, y);
                let (c_id, c_zz) = radial_gaussian(*gamma).hess_coeffs(r);
                c_id * dot(a, c) + c_zz * dot_diff(a, x, y) * dot_diff(c, x, y)
            }
            Kernel::LinearMatern { gamma } => {
                let r = dist(x, y);
                let (c_id, c_zz) = radial_matern(*gamma).hess_coeffs(r);
                c_id * dot(a, c) + c_zz * dot_diff(a, x, y) * dot_diff(c, x, y)
            }
            Kernel::QuadraticProduct { base } => {
                let d = dot(x, y);
                let b = base.eval_unchecked(x, y);
                let g1a = base.grad1_dot_unchecked(x, y, a); // ⟨a, ∇₁b⟩
                let g2c = base.grad1_dot_unchecked(y, x, c); // ⟨c, ∇₂b⟩
                2.0 * dot(x, c) * dot(y, a) * b
                    + 2.0 * d * b * dot(a, c)
                    + 2.0 * d * dot(a, y) * g2c
                    + 2.0 * d * dot(x, c) * g1a
                    + d * d * base.hessian12_form_unchecked(x, y, a, c)
            }
        }
    }

    /// ∇₂∇₁k(x,y)ᵀ·a in O(N); the y-gradient of ⟨a, ∇₁k(x, y)⟩.
    pub fn hessian12_tr_apply(&self, x: &[f64], y: &[f64], a: &[f64]) -> DVector<f64> {
        check_points(x, y);
        assert_eq!(a.len(), x.len(), "direction dimension mismatch");
        let mut out = DVector::zeros(x.len());
        self.hessian12_tr_acc(x, y, a, 1.0, &mut out);
        out
    }

    fn hessian12_tr_acc(&self, x: &[f64], y: &[f64], a: &[f64], w: f64, out: &mut DVector<f64>) {
        let n = x.len();
        match self {
            Kernel::Gaussian { gamma } => {
                let r = dist(x, y);
                let (c_id, c_zz) = radial_gaussian(*gamma).hess_coeffs(r);
                let az = c_zz * dot_diff(a, x, y);
                for l in 0..n {
                    out[l] += w * (c_id * a[l] + az * (x[l] - y[l]));
                }
            }
            Kernel::LinearMatern { gamma } => {
                let r = dist(x, y);
                let (c_id, c_zz) = radial_matern(*gamma).hess_coeffs(r);
                let az = c_zz * dot_diff(a, x, y);
                for l in 0..n {
                    out[l] += w * (c_id * a[l] + az * (x[l] - y[l]));
                }
            }
            Kernel::QuadraticProduct { base } => {
                let d = dot(x, y);
                let b = base.eval_unchecked(x, y);
                let ay = dot(a, y);
                let g1a = base.grad1_dot_unchecked(x, y, a);
                // (E_kᵀa)_l = 2 x_l ⟨a,y⟩ b + 2 d b a_l + 2 d ⟨a,y⟩ (∇₂b)_l
                //           + 2 d x_l ⟨a,∇₁b⟩ + d² (E_bᵀa)_l
                for l in 0..n {
                    out[l] += w * (2.0 * x[l] * ay * b + 2.0 * d * b * a[l] + 2.0 * d * x[l] * g1a);
                }
                // ∇₂b term: ∇₂b(x,y) = ∇₁b(y,x)
                base.grad1_acc(y, x, w * 2.0 * d * ay, out);
                base.hessian12_tr_acc(x, y, a, w * d * d, out);
            }
        }
    }

    /// Parse a kernel by its configuration name.
    pub fn from_name(name: &str, gamma: f64) -> Result<Self, String> {
        if !(gamma > 0.0) {
            return Err(format!("shape parameter must be positive, got {gamma}"));
        }
        match name {
            "gaussian" => Ok(Self::gaussian(gamma)),
            "linear-matern" => Ok(Self::linear_matern(gamma)),
            "gaussian-quad" => Ok(Self::gaussian_quad(gamma)),
            "linear-matern-quad" => Ok(Self::linear_matern_quad(gamma)),
            other => Err(format!(
                "unknown kernel '{other}'; valid names: gaussian, linear-matern, \
                 gaussian-quad, linear-matern-quad"
            )),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Kernel::Gaussian { .. } => "gaussian".into(),
            Kernel::LinearMatern { .. } => "linear-matern".into(),
            Kernel::QuadraticProduct { base } => match **base {
                Kernel::Gaussian { .. } => "gaussian-quad".into(),
                Kernel::LinearMatern { .. } => "linear-matern-quad".into(),
                Kernel::QuadraticProduct { .. } => format!("{}-quad", base.name()),
            },
        }
    }
}

/// Radial profile φ(r) with the two derived quantities used everywhere:
/// ψ(r) = φ'(r)/r (so ∇₁k = ψ·(x-y)) and the mixed-Hessian coefficients
/// (c_id, c_zz) with E = c_id·I + c_zz·(x-y)(x-y)ᵀ.
struct Radial {
    value: fn(f64, f64) -> f64,
    psi: fn(f64, f64) -> f64,
    hess: fn(f64, f64) -> (f64, f64),
    gamma: f64,
}

impl Radial {
    fn value(&self, r: f64) -> f64 {
        (self.value)(self.gamma, r)
    }
    fn psi(&self, r: f64) -> f64 {
        (self.psi)(self.gamma, r)
    }
    fn hess_coeffs(&self, r: f64) -> (f64, f64) {
        (self.hess)(self.gamma, r)
    }
}

fn radial_gaussian(gamma: f64) -> Radial {
    Radial {
        value: |g, r| (-(g * r) * (g * r)).exp(),
        // φ' = -2γ²r·φ  ⇒  ψ = -2γ²φ
        psi: |g, r| -2.0 * g * g * (-(g * r) * (g * r)).exp(),
        // E = 2γ²φ·I - 4γ⁴φ·zzᵀ, smooth everywhere
        hess: |g, r| {
            let e = (-(g * r) * (g * r)).exp();
            (2.0 * g * g * e, -4.0 * g.powi(4) * e)
        },
        gamma,
    }
}

fn radial_matern(gamma: f64) -> Radial {
    Radial {
        value: |g, r| (-g * r).exp() * (1.0 + g * r),
        // φ' = -γ²r·e^{-γr}  ⇒  ψ = -γ²e^{-γr}, smooth through r = 0
        psi: |g, r| -g * g * (-g * r).exp(),
        // E = γ²e^{-γr}·(I - γ·zzᵀ/r); the zzᵀ coefficient is 0/0 at r = 0
        // with limit 0 (‖zzᵀ‖ ≤ r²), hence the branch.
        hess: |g, r| {
            let e = (-g * r).exp();
            let c_zz = if r < MATERN_LIMIT_RADIUS {
                0.0
            } else {
                -g.powi(3) * e / r
            };
            (g * g * e, c_zz)
        },
        gamma,
    }
}

fn check_points(x: &[f64], y: &[f64]) {
    assert_eq!(
        x.len(),
        y.len(),
        "point dimension mismatch: {} vs {}",
        x.len(),
        y.len()
    );
    assert!(!x.is_empty(), "points must have dimension >= 1");
    assert!(
        x.iter().chain(y.iter()).all(|v| v.is_finite()),
        "non-finite input point"
    );
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// ⟨a, x - y⟩
#[inline]
fn dot_diff(a: &[f64], x: &[f64], y: &[f64]) -> f64 {
    a.iter()
        .zip(x.iter().zip(y))
        .map(|(ai, (xi, yi))| ai * (xi - yi))
        .sum()
}

#[inline]
fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}
