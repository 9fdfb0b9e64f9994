//! Experiment configuration: a flat key-value format with dotted section
//! names, plus the built-in presets.
//!
//! Grammar: one `section.key = value` pair per line; `#` starts a comment;
//! blank lines are ignored. Unknown keys are errors. Values are plain
//! tokens (numbers, names, paths) with no quoting.

use serde::Serialize;
use std::collections::BTreeSet;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected 'key = value', got '{text}'")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value '{value}' for '{key}': {reason}")]
    InvalidValue { line: usize, key: String, value: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("unknown preset '{0}'; available: {1}")]
    UnknownPreset(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleKind {
    /// Tensor grid (two-dimensional problems only).
    Grid,
    /// Uniform samples from the domain box.
    Uniform,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub problem_name: String,
    /// Collocation node count for the heat problems.
    pub n_nodes: Option<usize>,
    pub kernel_name: String,
    /// Shape parameter γ (config files may give γ² instead; it is resolved
    /// at parse time).
    pub gamma: f64,
    pub train_kind: SampleKind,
    /// Nodes per axis for grids, sample count otherwise.
    pub train_size: usize,
    pub train_seed: u64,
    pub test_size: usize,
    pub test_seed: u64,
    pub max_centers: usize,
    pub target_residual: f64,
    pub greedy_batch: usize,
    pub pi_epsilon: f64,
    pub pi_max_iters: usize,
    /// "psd", "quadratic" (explicit alpha/beta), or "auto-lqr" (bounds from
    /// the Riccati solution of the linearization).
    pub verification_mode: String,
    pub verification_alpha: Option<f64>,
    pub verification_beta: Option<f64>,
    /// "none", "auto", or a fixed nonnegative value.
    pub jitter: String,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        // the two-dimensional benchmark defaults; presets override per problem
        Self {
            problem_name: "toy".into(),
            n_nodes: None,
            kernel_name: "gaussian".into(),
            gamma: 1.7f64.sqrt(),
            train_kind: SampleKind::Grid,
            train_size: 100,
            train_seed: 1,
            test_size: 100,
            test_seed: 2,
            max_centers: 300,
            target_residual: 1e-4,
            greedy_batch: 1,
            pi_epsilon: 1e-9,
            pi_max_iters: 8,
            verification_mode: "auto-lqr".into(),
            verification_alpha: None,
            verification_beta: None,
            jitter: "auto".into(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Parse a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                ConfigError::Malformed { line, text: content.to_string() }
            })?;
            let key = key.trim();
            let value = value.trim();
            if value.is_empty() {
                return Err(ConfigError::Malformed { line, text: content.to_string() });
            }
            cfg.set(key, value, line)?;
            seen.insert(key.to_string());
        }
        cfg.validate().map_err(ConfigError::Invalid)?;
        Ok(cfg)
    }

    /// Apply one `key=value` override (the CLI `--override` mechanism goes
    /// through the same parser as config files).
    pub fn apply_override(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (key, value) = pair.split_once('=').ok_or_else(|| ConfigError::Malformed {
            line: 0,
            text: pair.to_string(),
        })?;
        self.set(key.trim(), value.trim(), 0)?;
        self.validate().map_err(ConfigError::Invalid)
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        let bad = |reason: &str| ConfigError::InvalidValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
            reason: reason.to_string(),
        };
        match key {
            "problem.name" => self.problem_name = value.to_string(),
            "problem.n_nodes" => {
                self.n_nodes = Some(value.parse().map_err(|_| bad("expected integer"))?)
            }
            "kernel.name" => self.kernel_name = value.to_string(),
            "kernel.gamma" => {
                self.gamma = value.parse().map_err(|_| bad("expected number"))?
            }
            "kernel.gamma_squared" => {
                let g2: f64 = value.parse().map_err(|_| bad("expected number"))?;
                if g2 <= 0.0 {
                    return Err(bad("must be positive"));
                }
                self.gamma = g2.sqrt();
            }
            "train.kind" => {
                self.train_kind = match value {
                    "grid" => SampleKind::Grid,
                    "uniform" => SampleKind::Uniform,
                    _ => return Err(bad("expected grid or uniform")),
                }
            }
            "train.size" => {
                self.train_size = value.parse().map_err(|_| bad("expected integer"))?
            }
            "train.seed" => {
                self.train_seed = value.parse().map_err(|_| bad("expected integer"))?
            }
            "test.size" => self.test_size = value.parse().map_err(|_| bad("expected integer"))?,
            "test.seed" => self.test_seed = value.parse().map_err(|_| bad("expected integer"))?,
            "greedy.max_centers" => {
                self.max_centers = value.parse().map_err(|_| bad("expected integer"))?
            }
            "greedy.target_residual" => {
                self.target_residual = value.parse().map_err(|_| bad("expected number"))?
            }
            "greedy.batch" => {
                self.greedy_batch = value.parse().map_err(|_| bad("expected integer"))?
            }
            "pi.epsilon" => {
                self.pi_epsilon = value.parse().map_err(|_| bad("expected number"))?
            }
            "pi.max_iters" => {
                self.pi_max_iters = value.parse().map_err(|_| bad("expected integer"))?
            }
            "verification.mode" => {
                if !["psd", "quadratic", "auto-lqr"].contains(&value) {
                    return Err(bad("expected psd, quadratic, or auto-lqr"));
                }
                self.verification_mode = value.to_string();
            }
            "verification.alpha" => {
                self.verification_alpha =
                    Some(value.parse().map_err(|_| bad("expected number"))?)
            }
            "verification.beta" => {
                self.verification_beta =
                    Some(value.parse().map_err(|_| bad("expected number"))?)
            }
            "jitter" => self.jitter = value.to_string(),
            "output.dir" => self.output_dir = PathBuf::from(value),
            other => {
                return Err(ConfigError::UnknownKey { line, key: other.to_string() })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0) {
            return Err(format!("kernel.gamma must be positive, got {}", self.gamma));
        }
        if self.train_size == 0 || self.test_size == 0 {
            return Err("train.size and test.size must be positive".into());
        }
        if self.max_centers == 0 {
            return Err("greedy.max_centers must be positive".into());
        }
        if self.greedy_batch == 0 {
            return Err("greedy.batch must be positive".into());
        }
        if !(self.pi_epsilon > 0.0) {
            return Err(format!("pi.epsilon must be positive, got {}", self.pi_epsilon));
        }
        if self.pi_max_iters == 0 {
            return Err("pi.max_iters must be positive".into());
        }
        if self.verification_mode == "quadratic"
            && (self.verification_alpha.is_none() || self.verification_beta.is_none())
        {
            return Err(
                "verification.mode = quadratic requires verification.alpha and verification.beta"
                    .into(),
            );
        }
        self.jitter
            .parse::<crate::recovery::JitterPolicy>()
            .map_err(|e| e.to_string())?;
        Ok(())
    }
}

/// The built-in experiment presets, mirroring the four benchmark studies.
pub fn presets() -> Vec<(&'static str, ExperimentConfig)> {
    let toy = ExperimentConfig {
        output_dir: PathBuf::from("out/toy"),
        ..Default::default()
    };
    let vdp = ExperimentConfig {
        problem_name: "vdp".into(),
        kernel_name: "gaussian-quad".into(),
        gamma: 1.1f64.sqrt(),
        output_dir: PathBuf::from("out/vdp"),
        verification_mode: "auto-lqr".into(),
        ..Default::default()
    };
    let heat_linear = ExperimentConfig {
        problem_name: "heat-linear".into(),
        n_nodes: Some(50),
        kernel_name: "linear-matern-quad".into(),
        gamma: 5e-8,
        train_kind: SampleKind::Uniform,
        train_size: 100_000,
        max_centers: 1500,
        target_residual: 1e-5,
        pi_max_iters: 6,
        output_dir: PathBuf::from("out/heat-linear"),
        ..Default::default()
    };
    let heat_nonlinear = ExperimentConfig {
        gamma: 4e-8,
        problem_name: "heat-nonlinear".into(),
        output_dir: PathBuf::from("out/heat-nonlinear"),
        ..heat_linear.clone()
    };
    vec![
        ("toy", toy),
        ("vdp", vdp),
        ("heat-linear", heat_linear),
        ("heat-nonlinear", heat_nonlinear),
    ]
}

pub fn preset(name: &str) -> Result<ExperimentConfig, ConfigError> {
    presets()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| c)
        .ok_or_else(|| {
            let names: Vec<&str> = presets().iter().map(|(n, _)| *n).collect();
            ConfigError::UnknownPreset(name.to_string(), names.join(", "))
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_full_config() {
        let text = "\
# experiment
problem.name = vdp
kernel.name = gaussian-quad
kernel.gamma_squared = 1.1   # resolved to sqrt
train.kind = grid
train.size = 50
train.seed = 3
test.size = 64
test.seed = 4
greedy.max_centers = 120
greedy.target_residual = 1e-5
pi.epsilon = 1e-8
pi.max_iters = 5
verification.mode = psd
jitter = none
output.dir = /tmp/x
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.problem_name, "vdp");
        assert!((cfg.gamma - 1.1f64.sqrt()).abs() < 1e-15);
        assert_eq!(cfg.train_size, 50);
        assert_eq!(cfg.verification_mode, "psd");
        assert_eq!(cfg.jitter, "none");
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(
            ExperimentConfig::parse("bogus.key = 1"),
            Err(ConfigError::UnknownKey { .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("train.size = many"),
            Err(ConfigError::InvalidValue { .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("no equals sign"),
            Err(ConfigError::Malformed { .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("kernel.gamma = -2"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("verification.mode = quadratic"),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn overrides_go_through_the_same_parser() {
        let mut cfg = preset("toy").unwrap();
        cfg.apply_override("greedy.max_centers=25").unwrap();
        assert_eq!(cfg.max_centers, 25);
        assert!(cfg.apply_override("greedy.max_centers=0").is_err());
        assert!(cfg.apply_override("nonsense").is_err());
    }

    #[test]
    fn presets_are_valid_and_carry_reported_shapes() {
        for (name, cfg) in presets() {
            cfg.validate().unwrap_or_else(|e| panic!("preset {name}: {e}"));
        }
        let toy = preset("toy").unwrap();
        assert!((toy.gamma * toy.gamma - 1.7).abs() < 1e-12);
        assert_eq!(toy.kernel_name, "gaussian");
        let vdp = preset("vdp").unwrap();
        assert!((vdp.gamma * vdp.gamma - 1.1).abs() < 1e-12);
        let hl = preset("heat-linear").unwrap();
        assert_eq!(hl.gamma, 5e-8);
        assert_eq!(hl.n_nodes, Some(50));
        let hn = preset("heat-nonlinear").unwrap();
        assert_eq!(hn.gamma, 4e-8);
        assert!(preset("nope").is_err());
    }
}
