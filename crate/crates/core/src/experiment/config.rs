//! Experiment configuration, read from a TOML file with strict keys.
//!
//! ```toml
//! [model]
//! kind = "ntk-mlp"            # or "affine"
//! hidden_widths = [256]
//! hidden_activation = "sigmoid"
//! s_w = 1.0
//! s_b = 0.1
//!
//! [data]
//! source = "half-moons"       # "mnist", "synthetic" or "half-moons"
//! agents = 8
//! samples_per_agent = 200
//! seed = 0
//!
//! [training]
//! topology = "complete"       # "cycle", "star", "complete" or "custom:<path>"
//! algorithm = "dgd"
//! step_size = 1e-4
//! steps = 200
//! ```
//!
//! Only `model.kind` and `data.source` are required.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distopt::Algorithm;
use crate::error::{Error, Result};
use crate::flow::{Solver, DEFAULT_DENSE_CAP};
use crate::mixing::Topology;
use crate::model::{Activation, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// Digits 0 and 1 from MNIST IDX files.
    Mnist,
    /// Two Gaussian blobs standing in for MNIST 0/1.
    Synthetic,
    HalfMoons,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default = "default_hidden")]
    pub hidden_widths: Vec<usize>,
    #[serde(default = "default_activation")]
    pub hidden_activation: Activation,
    #[serde(default = "default_s_w")]
    pub s_w: f64,
    #[serde(default = "default_s_b")]
    pub s_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mnist_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mnist_labels: Option<PathBuf>,
    /// Input dimension of the synthetic stand-in.
    #[serde(default = "default_synthetic_dim")]
    pub synthetic_dim: usize,
    /// Defaults to 0.1 for half-moons and 0.3 for synthetic blobs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
    #[serde(default = "default_agents")]
    pub agents: usize,
    #[serde(default = "default_samples")]
    pub samples_per_agent: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_topology")]
    pub topology: Topology,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionConfig {
    #[serde(default = "default_solver")]
    pub solver: Solver,
    #[serde(default = "default_rk4_dt")]
    pub rk4_dt: f64,
    #[serde(default = "default_dense_cap")]
    pub dense_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Also dump the simulated parameters to `observed_params.bin`.
    #[serde(default)]
    pub record_params: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub prediction: PredictionConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_hidden() -> Vec<usize> {
    vec![256]
}
fn default_activation() -> Activation {
    Activation::Sigmoid
}
fn default_s_w() -> f64 {
    1.0
}
fn default_s_b() -> f64 {
    0.1
}
fn default_synthetic_dim() -> usize {
    784
}
fn default_agents() -> usize {
    8
}
fn default_samples() -> usize {
    200
}
fn default_topology() -> Topology {
    Topology::Complete
}
fn default_algorithm() -> Algorithm {
    Algorithm::Dgd
}
fn default_step_size() -> f64 {
    1e-4
}
fn default_steps() -> usize {
    200
}
fn default_solver() -> Solver {
    Solver::Auto
}
fn default_rk4_dt() -> f64 {
    0.1
}
fn default_dense_cap() -> usize {
    DEFAULT_DENSE_CAP
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("peerflow-out")
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            topology: default_topology(),
            algorithm: default_algorithm(),
            step_size: default_step_size(),
            steps: default_steps(),
        }
    }
}

impl Default for PredictionConfig {
    fn default() -> Self {
        PredictionConfig {
            solver: default_solver(),
            rk4_dt: default_rk4_dt(),
            dense_cap: default_dense_cap(),
        }
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_out_dir(),
            record_params: false,
        }
    }
}

impl DataConfig {
    pub fn noise_std(&self) -> f64 {
        self.noise_std.unwrap_or(match self.source {
            DataSource::HalfMoons => 0.1,
            _ => 0.3,
        })
    }
}

/// 1-based line of the first `key = ...` assignment in `text`, if any.
fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

impl ExperimentConfig {
    /// Parses and validates a config file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text, path)
    }

    /// Parses and validates config text; `path` only labels errors.
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let at = e
                .span()
                .map(|s| format!("line {}: ", text[..s.start].matches('\n').count() + 1))
                .unwrap_or_default();
            Error::Config {
                path: path.to_path_buf(),
                message: format!("{at}{}", e.message()),
            }
        })?;
        if let Err((key, message)) = cfg.check() {
            let leaf = key.rsplit('.').next().unwrap_or(key);
            let at = line_of(text, leaf).map(|l| format!("line {l}: ")).unwrap_or_default();
            return Err(Error::Config {
                path: path.to_path_buf(),
                message: format!("{at}{key}: {message}"),
            });
        }
        Ok(cfg)
    }

    /// Serialized form; parsing it back yields an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks value ranges; returns the offending key.
    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(key, message)| Error::Config {
            path: PathBuf::new(),
            message: format!("{key}: {message}"),
        })
    }

    fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        let t = &self.training;
        if !(t.step_size > 0.0 && t.step_size.is_finite()) {
            return Err(("training.step_size", format!("must be positive, got {}", t.step_size)));
        }
        if t.steps == 0 {
            return Err(("training.steps", "must be at least 1".into()));
        }
        let d = &self.data;
        if d.agents < 2 {
            return Err(("data.agents", format!("need at least 2 agents, got {}", d.agents)));
        }
        if d.samples_per_agent == 0 {
            return Err(("data.samples_per_agent", "must be at least 1".into()));
        }
        if let Some(s) = d.noise_std {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(("data.noise_std", format!("must be nonnegative, got {s}")));
            }
        }
        if d.source == DataSource::Synthetic && d.synthetic_dim == 0 {
            return Err(("data.synthetic_dim", "must be at least 1".into()));
        }
        if d.source == DataSource::Mnist {
            if d.mnist_images.is_none() {
                return Err(("data.mnist_images", "required when source = \"mnist\"".into()));
            }
            if d.mnist_labels.is_none() {
                return Err(("data.mnist_labels", "required when source = \"mnist\"".into()));
            }
        }
        let m = &self.model;
        if !(m.s_w > 0.0 && m.s_w.is_finite()) {
            return Err(("model.s_w", format!("must be positive, got {}", m.s_w)));
        }
        if !(m.s_b >= 0.0 && m.s_b.is_finite()) {
            return Err(("model.s_b", format!("must be nonnegative, got {}", m.s_b)));
        }
        if m.kind == ModelKind::NtkMlp && m.hidden_widths.iter().any(|&w| w == 0) {
            return Err(("model.hidden_widths", "widths must be positive".into()));
        }
        let p = &self.prediction;
        if !(p.rk4_dt > 0.0 && p.rk4_dt.is_finite()) {
            return Err(("prediction.rk4_dt", format!("must be positive, got {}", p.rk4_dt)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[model]\nkind = \"affine\"\n\n[data]\nsource = \"synthetic\"\n";

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml(text, Path::new("test.toml"))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.data.agents, 8);
        assert_eq!(c.data.samples_per_agent, 200);
        assert_eq!(c.training.step_size, 1e-4);
        assert_eq!(c.training.steps, 200);
        assert_eq!(c.training.topology, Topology::Complete);
        assert_eq!(c.prediction.solver, Solver::Auto);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = format!("{MINIMAL}\n[training]\nalgoritm = \"dgd\"\n");
        let msg = parse(&text).unwrap_err().to_string();
        assert!(msg.contains("algoritm"), "{msg}");
        assert!(msg.contains("line 8"), "{msg}");
    }

    #[test]
    fn negative_step_size_rejected() {
        let text = format!("{MINIMAL}\n[training]\nstep_size = -1.0\n");
        let msg = parse(&text).unwrap_err().to_string();
        assert!(msg.contains("training.step_size") && msg.contains("line 8"), "{msg}");
    }

    #[test]
    fn missing_required_key() {
        let msg = parse("[model]\nkind = \"affine\"\n[data]\nagents = 3\n").unwrap_err().to_string();
        assert!(msg.contains("source"), "{msg}");
    }

    #[test]
    fn bad_enum_and_number() {
        assert!(parse(&format!("{MINIMAL}[training]\nalgorithm = \"sgd\"\n")).is_err());
        assert!(parse(&format!("{MINIMAL}[training]\nsteps = \"many\"\n")).is_err());
        assert!(parse(&format!("{MINIMAL}[training]\ntopology = \"ring\"\n")).is_err());
    }

    #[test]
    fn round_trip() {
        let text = format!(
            "{MINIMAL}noise_std = 0.25\n[training]\ntopology = \"custom:edges.txt\"\nalgorithm = \"cta\"\n[prediction]\nsolver = \"rk4\"\n"
        );
        let c = parse(&text).unwrap();
        assert_eq!(c.training.topology, Topology::Custom("edges.txt".into()));
        let back = parse(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn mnist_needs_paths() {
        let msg = parse("[model]\nkind = \"affine\"\n[data]\nsource = \"mnist\"\n").unwrap_err().to_string();
        assert!(msg.contains("mnist_images"), "{msg}");
    }
}
