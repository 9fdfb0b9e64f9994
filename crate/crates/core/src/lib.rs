//! Approximation of optimal value functions for infinite-horizon,
//! control-affine problems by kernel-based policy iteration.
//!
//! The value function is recovered as the minimal-norm member of a
//! reproducing kernel Hilbert space matching the generalized HJB equation
//! at collocation centers, with positivity or two-sided quadratic bounds
//! checked a posteriori. Centers are picked greedily by the relative GHJB
//! residual; the induced feedback law is read off the surrogate gradient.
//!
//! Modules follow the pipeline: [`kernels`] and [`functionals`] build the
//! approximation space, [`recovery`] solves the interpolation problems,
//! [`ocp`] defines problems and residuals, [`care`] supplies LQR
//! initialization and verification bounds, [`rkhs_pi`] runs the iteration,
//! [`problems`] constructs the benchmarks, and [`config`]/[`driver`] wire
//! everything into the batch experiment CLI.

pub mod care;
pub mod config;
pub mod driver;
pub mod functionals;
pub mod kernels;
pub mod ocp;
pub mod problems;
pub mod recovery;
pub mod rkhs_pi;

pub use kernels::Kernel;
pub use ocp::{ControlProblem, Policy, VerificationMode, VerificationReport};
pub use recovery::{JitterPolicy, RecoveryReport, Surrogate};
pub use rkhs_pi::{GreedyConfig, PIConfig, PIHistory, PIOutcome};
