//! Batch experiment driver: builds problem, kernel, and configs from an
//! [`ExperimentConfig`], runs greedy selection plus policy iteration, and
//! writes CSV results with a JSON run manifest.
//!
//! Output files (all floats with 17 significant digits, '.' decimal):
//!   greedy.csv   n_centers,res_ghjb
//!   pi.csv       iter,e_eta,res_ghjb,error_pi,feasible,
//!                worst_lower_violation,worst_upper_violation,rkhs_norm,jitter_used
//!   centers.csv  one center per row
//!   manifest.json  config echo, wall time, library version, outcome
//!
//! Two runs with identical configs produce byte-identical CSVs; the
//! manifest differs only in its wall-time field.

use crate::care;
use crate::config::{ExperimentConfig, SampleKind};
use crate::kernels::Kernel;
use crate::ocp::VerificationMode;
use crate::problems::{self, Benchmark};
use crate::recovery::JitterPolicy;
use crate::rkhs_pi::{self, GreedyConfig, PIConfig, PIHistory};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    /// Configuration-level problem (maps to exit code 2).
    #[error("{0}")]
    Invalid(String),
    /// Solver abort (maps to exit code 1; partial CSVs are retained).
    #[error("solver aborted: {0}")]
    Solver(#[from] rkhs_pi::PIError),
    #[error("problem construction failed: {0}")]
    Problem(#[from] problems::ProblemError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Summary of a completed run.
#[derive(Debug)]
pub struct RunSummary {
    pub n_centers: usize,
    pub pi_iterations: usize,
    pub converged: bool,
    pub final_res_ghjb: f64,
    pub final_error_pi: Option<f64>,
    pub output_dir: PathBuf,
}

/// Execute one experiment and write its artifacts.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary, RunError> {
    cfg.validate().map_err(RunError::Invalid)?;
    let start = Instant::now();

    let benchmark = problems::by_name(&cfg.problem_name, cfg.n_nodes).map_err(|e| match e {
        problems::ProblemError::UnknownProblem(_) => RunError::Invalid(e.to_string()),
        other => RunError::Problem(other),
    })?;
    let kernel =
        Kernel::from_name(&cfg.kernel_name, cfg.gamma).map_err(RunError::Invalid)?;
    let jitter: JitterPolicy = cfg.jitter.parse().map_err(RunError::Invalid)?;

    let train = training_points(cfg, &benchmark)?;
    let test = problems::sample_box(
        benchmark.problem.domain(),
        cfg.test_size,
        cfg.test_seed,
        true,
    );

    let gc = GreedyConfig {
        candidate_pool: train,
        max_centers: cfg.max_centers,
        target_residual: cfg.target_residual,
        batch: cfg.greedy_batch,
    };
    let mut pc = PIConfig::new(
        cfg.pi_epsilon,
        cfg.pi_max_iters,
        verification_mode(cfg, &benchmark)?,
    );
    pc.jitter = jitter;
    pc.test_points = test;

    std::fs::create_dir_all(&cfg.output_dir)?;
    match rkhs_pi::run_rkhs_pi(&benchmark.problem, &kernel, &*benchmark.u0, &gc, &pc) {
        Ok(out) => {
            write_artifacts(&cfg.output_dir, cfg, &out.history, Some(&out.centers), "ok", start)?;
            let last = out.history.iterations.last();
            Ok(RunSummary {
                n_centers: out.centers.len(),
                pi_iterations: out.history.iterations.len(),
                converged: out.history.converged,
                final_res_ghjb: last.map(|r| r.res_ghjb).unwrap_or(f64::NAN),
                final_error_pi: last.and_then(|r| r.error_pi),
                output_dir: cfg.output_dir.clone(),
            })
        }
        Err(rkhs_pi::PIError::Aborted { history, source }) => {
            let status = format!("aborted: {source}");
            write_artifacts(&cfg.output_dir, cfg, &history, None, &status, start)?;
            Err(RunError::Solver(*source))
        }
        Err(e) => Err(RunError::Solver(e)),
    }
}

fn training_points(
    cfg: &ExperimentConfig,
    benchmark: &Benchmark,
) -> Result<Vec<Vec<f64>>, RunError> {
    match cfg.train_kind {
        SampleKind::Grid => {
            let d = benchmark.problem.domain();
            if d.dim() != 2 {
                return Err(RunError::Invalid(format!(
                    "train.kind = grid needs a two-dimensional domain, problem '{}' has {}",
                    cfg.problem_name,
                    d.dim()
                )));
            }
            Ok(problems::grid_2d(d.lo()[0], d.hi()[0], cfg.train_size))
        }
        SampleKind::Uniform => Ok(problems::sample_box(
            benchmark.problem.domain(),
            cfg.train_size,
            cfg.train_seed,
            true,
        )),
    }
}

fn verification_mode(
    cfg: &ExperimentConfig,
    benchmark: &Benchmark,
) -> Result<VerificationMode, RunError> {
    match cfg.verification_mode.as_str() {
        "psd" => Ok(VerificationMode::Psd),
        "quadratic" => Ok(VerificationMode::QuadraticBounds {
            alpha: cfg
                .verification_alpha
                .ok_or_else(|| RunError::Invalid("verification.alpha missing".into()))?,
            beta: cfg
                .verification_beta
                .ok_or_else(|| RunError::Invalid("verification.beta missing".into()))?,
        }),
        "auto-lqr" => {
            let sys = care::linearize(&benchmark.problem)
                .map_err(|e| RunError::Invalid(format!("linearization failed: {e}")))?;
            let sol = care::solve_care(&sys, 1e-10, 60)
                .map_err(|e| RunError::Invalid(format!("Riccati bounds failed: {e}")))?;
            let (alpha, beta) = care::lqr_bounds(&sol.p)
                .map_err(|e| RunError::Invalid(format!("Riccati bounds failed: {e}")))?;
            Ok(VerificationMode::QuadraticBounds { alpha, beta })
        }
        other => Err(RunError::Invalid(format!("unknown verification mode '{other}'"))),
    }
}

/// 17 significant digits, enough for a lossless f64 round-trip.
fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_artifacts(
    dir: &Path,
    cfg: &ExperimentConfig,
    history: &PIHistory,
    centers: Option<&[Vec<f64>]>,
    status: &str,
    start: Instant,
) -> Result<(), std::io::Error> {
    let mut greedy = String::from("n_centers,res_ghjb\n");
    for rec in &history.greedy_trace {
        let _ = writeln!(greedy, "{},{}", rec.n_centers, fmt_float(rec.res_ghjb));
    }
    std::fs::write(dir.join("greedy.csv"), greedy)?;

    let mut pi = String::from(
        "iter,e_eta,res_ghjb,error_pi,feasible,worst_lower_violation,\
         worst_upper_violation,rkhs_norm,jitter_used\n",
    );
    for rec in &history.iterations {
        let _ = writeln!(
            pi,
            "{},{},{},{},{},{},{},{},{}",
            rec.iter,
            fmt_float(rec.e_eta),
            fmt_float(rec.res_ghjb),
            rec.error_pi.map(fmt_float).unwrap_or_default(),
            rec.verification.feasible,
            fmt_float(rec.verification.worst_lower_violation),
            fmt_float(rec.verification.worst_upper_violation),
            fmt_float(rec.rkhs_norm),
            fmt_float(rec.jitter_used),
        );
    }
    std::fs::write(dir.join("pi.csv"), pi)?;

    if let Some(centers) = centers {
        let dim = centers.first().map(|c| c.len()).unwrap_or(0);
        let header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
        let mut body = header.join(",");
        body.push('\n');
        for c in centers {
            let row: Vec<String> = c.iter().map(|v| fmt_float(*v)).collect();
            body.push_str(&row.join(","));
            body.push('\n');
        }
        std::fs::write(dir.join("centers.csv"), body)?;
    }

    let manifest = serde_json::json!({
        "config": cfg,
        "status": status,
        "wall_time_seconds": start.elapsed().as_secs_f64(),
        "version": env!("CARGO_PKG_VERSION"),
        "n_centers": centers.map(|c| c.len()),
        "pi_iterations": history.iterations.len(),
        "converged": history.converged,
        "skipped_candidates": history.skipped_candidates,
    });
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}
