//! Continuous linear functionals on the RKHS and their Gram matrices.
//!
//! Two kinds of functionals appear: point evaluation `δ_x` and
//! directional gradient evaluation `ξ ↦ ⟨a, ∇ξ(x)⟩`. Their Riesz
//! representers are `k(x,·)` and `⟨a, ∇₁k(x,·)⟩`, and the pairwise
//! inner products of representers fill the generalized Gram matrix that
//! every recovery problem solves against.

use crate::kernels::Kernel;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FunctionalError {
    #[error("functional set contains duplicate entries at indices {0} and {1}")]
    Duplicate(usize, usize),
    #[error("gradient functional at index {0} has zero direction")]
    ZeroDirection(usize),
    #[error("functional at index {0} has dimension {found}, expected {expected}", found = .1, expected = .2)]
    DimensionMismatch(usize, usize, usize),
    #[error("empty functional set")]
    Empty,
}

/// A continuous linear functional with a kernel-section representer.
#[derive(Debug, Clone, PartialEq)]
pub enum Functional {
    /// `ξ ↦ ξ(x)`
    PointEval { x: Vec<f64> },
    /// `ξ ↦ ⟨a, ∇ξ(x)⟩`
    DirGrad { x: Vec<f64>, a: Vec<f64> },
}

impl Functional {
    pub fn point(x: Vec<f64>) -> Self {
        Functional::PointEval { x }
    }

    pub fn dir_grad(x: Vec<f64>, a: Vec<f64>) -> Self {
        Functional::DirGrad { x, a }
    }

    pub fn location(&self) -> &[f64] {
        match self {
            Functional::PointEval { x } | Functional::DirGrad { x, .. } => x,
        }
    }

    pub fn dim(&self) -> usize {
        self.location().len()
    }

    /// Value of the Riesz representer at `y`.
    pub fn representer_value(&self, k: &Kernel, y: &[f64]) -> f64 {
        match self {
            Functional::PointEval { x } => k.eval(x, y),
            Functional::DirGrad { x, a } => k.grad1_dot(x, y, a),
        }
    }

    /// Gradient in `y` of the Riesz representer.
    pub fn representer_gradient(&self, k: &Kernel, y: &[f64]) -> DVector<f64> {
        match self {
            Functional::PointEval { x } => k.grad2(x, y),
            Functional::DirGrad { x, a } => k.hessian12_tr_apply(x, y, a),
        }
    }

    /// ⟨dir, ∇_y representer(y)⟩ without allocating the gradient.
    pub(crate) fn representer_gradient_dot(&self, k: &Kernel, y: &[f64], dir: &[f64]) -> f64 {
        match self {
            // ∇₂k(x,y)·dir = ⟨dir, ∇₁k(y,x)⟩
            Functional::PointEval { x } => k.grad1_dot(y, x, dir),
            // (E_k(x,y)ᵀ a)·dir = aᵀ E_k(x,y) dir
            Functional::DirGrad { x, a } => k.hessian12_form(x, y, a, dir),
        }
    }

    /// RKHS inner product of the representers of `self` and `other`.
    pub fn gram_entry(&self, other: &Functional, k: &Kernel) -> f64 {
        match (self, other) {
            (Functional::PointEval { x: xi }, Functional::PointEval { x: xj }) => k.eval(xi, xj),
            (Functional::PointEval { x: xi }, Functional::DirGrad { x: xj, a: aj }) => {
                // ⟨w_i, w_j⟩ = λ_i(w_j) = w_j(x_i) = ⟨a_j, ∇₁k(x_j, x_i)⟩
                k.grad1_dot(xj, xi, aj)
            }
            (Functional::DirGrad { x: xi, a: ai }, Functional::PointEval { x: xj }) => {
                k.grad1_dot(xi, xj, ai)
            }
            (Functional::DirGrad { x: xi, a: ai }, Functional::DirGrad { x: xj, a: aj }) => {
                k.hessian12_form(xi, xj, ai, aj)
            }
        }
    }
}

/// An ordered collection of pairwise distinct functionals; the order fixes
/// Gram row/column indexing.
#[derive(Debug, Clone)]
pub struct FunctionalSet {
    entries: Vec<Functional>,
    dim: usize,
}

impl FunctionalSet {
    /// Validates dimensions, nonzero gradient directions, and pairwise
    /// distinctness (exact float equality on coordinates; centers come from
    /// a deduplicated pool, so approximate matching would mask data bugs).
    pub fn new(entries: Vec<Functional>) -> Result<Self, FunctionalError> {
        let dim = entries.first().ok_or(FunctionalError::Empty)?.dim();
        for (i, f) in entries.iter().enumerate() {
            if f.dim() != dim {
                return Err(FunctionalError::DimensionMismatch(i, f.dim(), dim));
            }
            if let Functional::DirGrad { a, .. } = f {
                if a.len() != dim {
                    return Err(FunctionalError::DimensionMismatch(i, a.len(), dim));
                }
                if a.iter().map(|v| v * v).sum::<f64>() == 0.0 {
                    return Err(FunctionalError::ZeroDirection(i));
                }
            }
        }
        for i in 0..entries.len() {
            for j in (i + 1)..entries.len() {
                if entries[i] == entries[j] {
                    return Err(FunctionalError::Duplicate(i, j));
                }
            }
        }
        Ok(Self { entries, dim })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[Functional] {
        &self.entries
    }

    /// The generalized Gram matrix ⟨w_i, w_j⟩. The upper triangle is
    /// computed and mirrored, so the output equals its transpose bit-exactly.
    pub fn gram(&self, k: &Kernel) -> DMatrix<f64> {
        let n = self.entries.len();
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.entries[i].gram_entry(&self.entries[j], k);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    /// Apply every functional to a function given by value/gradient
    /// closures; used to recompute constraint residuals independently of
    /// the Gram route.
    pub fn apply<V, G>(&self, value: V, gradient: G) -> DVector<f64>
    where
        V: Fn(&[f64]) -> f64,
        G: Fn(&[f64]) -> DVector<f64>,
    {
        DVector::from_iterator(
            self.entries.len(),
            self.entries.iter().map(|f| match f {
                Functional::PointEval { x } => value(x),
                Functional::DirGrad { x, a } => {
                    gradient(x).dot(&DVector::from_column_slice(a))
                }
            }),
        )
    }
}
