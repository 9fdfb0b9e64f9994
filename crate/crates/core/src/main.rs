//! Command-line experiment driver.

use clap::{Parser, Subcommand};
use hjb_pi::config::{self, ConfigError, ExperimentConfig};
use hjb_pi::driver::{self, RunError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "hjb-pi",
    version,
    about = "Approximate optimal value functions by kernel-based policy iteration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        /// Path to a key-value config file.
        config: PathBuf,
    },
    /// Run a built-in preset, optionally overriding fields.
    Preset {
        /// Preset name (see list-presets).
        name: String,
        /// Output directory (overrides the preset's output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Additional key=value overrides, applied in order.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// List the built-in presets with their key parameters.
    ListPresets,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(AppError::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

enum AppError {
    /// Unusable input: exit code 2.
    Config(String),
    /// Solver or I/O failure: exit code 1.
    Run(String),
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Config(e.to_string())
    }
}

impl From<RunError> for AppError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Invalid(msg) => AppError::Config(msg),
            other => AppError::Run(other.to_string()),
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Run { config } => {
            let text = std::fs::read_to_string(&config).map_err(|e| {
                AppError::Config(format!("cannot read {}: {e}", config.display()))
            })?;
            let cfg = ExperimentConfig::parse(&text)?;
            execute(&cfg)
        }
        Command::Preset { name, out, overrides } => {
            let mut cfg = config::preset(&name)?;
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            for pair in &overrides {
                cfg.apply_override(pair)?;
            }
            execute(&cfg)
        }
        Command::ListPresets => {
            for (name, cfg) in config::presets() {
                println!(
                    "{name:15} problem={} kernel={} gamma={:e} train={:?}/{} centers<={}",
                    cfg.problem_name,
                    cfg.kernel_name,
                    cfg.gamma,
                    cfg.train_kind,
                    cfg.train_size,
                    cfg.max_centers
                );
            }
            Ok(())
        }
    }
}

fn execute(cfg: &ExperimentConfig) -> Result<(), AppError> {
    let summary = driver::run(cfg)?;
    println!(
        "completed: {} centers, {} policy iterations (converged: {}), \
         res-ghjb {:.3e}{} -> {}",
        summary.n_centers,
        summary.pi_iterations,
        summary.converged,
        summary.final_res_ghjb,
        summary
            .final_error_pi
            .map(|e| format!(", error-pi {e:.3e}"))
            .unwrap_or_default(),
        summary.output_dir.display()
    );
    Ok(())
}
