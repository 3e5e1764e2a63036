//! Config-driven experiments behind the `simulate`, `predict`, `compare`
//! and `stability` commands.
//!
//! Every command writes into one output directory:
//!
//! | file                  | written by  |
//! |-----------------------|-------------|
//! | `config.toml`         | every command (resolved config snapshot) |
//! | `observed.csv`        | simulate (`step,agent,loss`) |
//! | `observed_params.bin` | simulate, when `output.record_params` is set |
//! | `predicted.csv`       | predict (`step,agent,loss,mode`) |
//! | `compare.txt`         | compare |
//! | `plot.svg`            | compare |
//! | `stability.txt`       | stability |
//!
//! The CLI commands use the MSE loss throughout. Step `k` of the simulation
//! is compared with flow time `t = k`.

mod config;
mod plot;

use std::fs;
use std::path::{Path, PathBuf};

pub use config::{
    DataConfig, DataSource, ExperimentConfig, ModelConfig, OutputConfig, PredictionConfig, TrainingConfig,
};
pub use plot::loss_chart;

use crate::data::{gaussian_blobs, half_moons, load_mnist_idx, split_iid, AgentData};
use crate::distopt::{run_training, sync_init, StackedParams, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::flow::{
    build_anchor, build_system, predict_losses, solve_flow, ClosedFormOptions, LinearizationAnchor,
    PredictedLosses, PredictionMode, Solver,
};
use crate::mixing::{build_topology, metropolis_hastings, MixingMatrix};
use crate::model::{ModelKind, ModelSpec};
use crate::stability::{bibo_report, StabilityReport, StabilityTolerances};

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const OBSERVED_CSV: &str = "observed.csv";
pub const OBSERVED_PARAMS: &str = "observed_params.bin";
pub const PREDICTED_CSV: &str = "predicted.csv";
pub const COMPARE_TXT: &str = "compare.txt";
pub const PLOT_SVG: &str = "plot.svg";
pub const STABILITY_TXT: &str = "stability.txt";

/// Everything a command needs, derived deterministically from a config.
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: ModelSpec,
    pub data: AgentData,
    pub weights: MixingMatrix,
    pub theta0: StackedParams,
}

impl Problem {
    /// Data uses `seed`, the shard split `seed + 1` and the model
    /// initialization `seed + 2`.
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let d = &cfg.data;
        let (q, per) = (d.agents, d.samples_per_agent);
        let source = match d.source {
            DataSource::Mnist => load_mnist_idx(
                d.mnist_images.as_deref().unwrap(),
                d.mnist_labels.as_deref().unwrap(),
                &[0, 1],
            )?,
            DataSource::Synthetic => gaussian_blobs(q * per, d.synthetic_dim, d.noise_std(), d.seed)?,
            DataSource::HalfMoons => half_moons(q * per, d.noise_std(), d.seed)?,
        };
        let data = split_iid(&source, q, per, d.seed.wrapping_add(1))?;
        let m = &cfg.model;
        let spec = match m.kind {
            ModelKind::Affine => ModelSpec::affine(data.input_dim())?,
            ModelKind::NtkMlp => ModelSpec::ntk_mlp_uniform(
                data.input_dim(),
                &m.hidden_widths,
                data.output_dim(),
                m.hidden_activation,
                m.s_w,
                m.s_b,
            )?,
        };
        let weights = metropolis_hastings(&build_topology(&cfg.training.topology, q)?);
        let theta0 = sync_init(&spec, d.seed.wrapping_add(2), q);
        Ok(Problem {
            spec,
            data,
            weights,
            theta0,
        })
    }

    pub fn anchor(&self) -> Result<LinearizationAnchor> {
        build_anchor(&self.spec, &self.theta0, &self.data)
    }
}

/// Output of [`predict`].
#[derive(Debug, Clone)]
pub struct Prediction {
    pub losses: PredictedLosses,
    pub solver: Solver,
}

fn prepare_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_SNAPSHOT), cfg.to_toml())?;
    Ok(dir)
}

/// Runs the configured distributed training and writes `observed.csv`.
pub fn simulate(cfg: &ExperimentConfig) -> Result<TrajectoryRecord> {
    let problem = Problem::from_config(cfg)?;
    let t = &cfg.training;
    let record = run_training(
        t.algorithm,
        t.steps,
        t.step_size,
        &problem.theta0,
        &problem.spec,
        &problem.data,
        &problem.weights,
        cfg.output.record_params,
    )?;
    let dir = prepare_dir(cfg)?;
    record.write_csv(fs::File::create(dir.join(OBSERVED_CSV))?)?;
    if cfg.output.record_params {
        record.write_params_bin(&dir.join(OBSERVED_PARAMS))?;
    }
    Ok(record)
}

/// Solves the linearized flow at `t = 0..=K` for a problem.
pub fn predict_problem(problem: &Problem, cfg: &ExperimentConfig) -> Result<Prediction> {
    let anchor = problem.anchor()?;
    let t = &cfg.training;
    let system = build_system(t.algorithm, &anchor, problem.weights.as_mat(), t.step_size)?;
    let times: Vec<f64> = (0..=t.steps).map(|k| k as f64).collect();
    let p = &cfg.prediction;
    let options = ClosedFormOptions {
        dense_cap: p.dense_cap,
        ..Default::default()
    };
    let (states, solver) = solve_flow(&system, &times, p.solver, &options, p.rk4_dt)?;
    let losses = predict_losses(&anchor, &problem.spec, &problem.data, &states)?;
    Ok(Prediction { losses, solver })
}

/// Predicts per-agent losses and writes `predicted.csv`.
pub fn predict(cfg: &ExperimentConfig) -> Result<Prediction> {
    let problem = Problem::from_config(cfg)?;
    let prediction = predict_problem(&problem, cfg)?;
    let dir = prepare_dir(cfg)?;
    prediction.losses.write_csv(fs::File::create(dir.join(PREDICTED_CSV))?)?;
    Ok(prediction)
}

/// Relative errors `|pred - obs| / |obs|` between two loss tables.
#[derive(Debug, Clone, PartialEq)]
pub struct LossComparison {
    pub per_agent_max: Vec<f64>,
    pub per_agent_mean: Vec<f64>,
    pub max: f64,
    pub mean: f64,
}

fn relative_error(obs: f64, pred: f64) -> f64 {
    if obs == pred {
        0.0
    } else {
        (pred - obs).abs() / obs.abs()
    }
}

/// Compares `predicted[k][q]` against `observed[k][q]` over all steps.
pub fn compare_losses(observed: &[Vec<f64>], predicted: &[Vec<f64>]) -> Result<LossComparison> {
    if observed.len() != predicted.len() || observed.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "observed has {} steps, predicted has {}",
            observed.len(),
            predicted.len()
        )));
    }
    let agents = observed[0].len();
    if observed.iter().chain(predicted).any(|r| r.len() != agents) {
        return Err(Error::InvalidArgument("agent counts differ between steps or files".into()));
    }
    let mut per_agent_max = vec![0.0_f64; agents];
    let mut per_agent_mean = vec![0.0_f64; agents];
    for (o, p) in observed.iter().zip(predicted) {
        for q in 0..agents {
            let e = relative_error(o[q], p[q]);
            per_agent_max[q] = per_agent_max[q].max(e);
            per_agent_mean[q] += e / observed.len() as f64;
        }
    }
    Ok(LossComparison {
        max: per_agent_max.iter().copied().fold(0.0, f64::max),
        mean: per_agent_mean.iter().sum::<f64>() / agents as f64,
        per_agent_max,
        per_agent_mean,
    })
}

fn missing(path: &Path) -> Error {
    Error::MissingArtifact(path.to_path_buf())
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, field: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| {
        Error::InvalidArgument(format!("{}:{line}: bad {field} `{value}`", path.display()))
    })
}

/// Adds `value` at `table[step][agent]`, growing the table as needed.
fn place(table: &mut Vec<Vec<f64>>, step: usize, agent: usize, value: f64) {
    if table.len() <= step {
        table.resize(step + 1, Vec::new());
    }
    let row = &mut table[step];
    if row.len() <= agent {
        row.resize(agent + 1, f64::NAN);
    }
    row[agent] = value;
}

/// Reads a `step,agent,loss` file into `losses[step][agent]`.
pub fn read_observed_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|_| missing(path))?;
    let mut table = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 {
            return Err(Error::InvalidArgument(format!("{}:{line}: expected 3 fields", path.display())));
        }
        place(
            &mut table,
            parse_field(path, line, "step", &rec[0])?,
            parse_field(path, line, "agent", &rec[1])?,
            parse_field(path, line, "loss", &rec[2])?,
        );
    }
    Ok(table)
}

/// Reads a `step,agent,loss,mode` file.
pub fn read_predicted_csv(path: &Path) -> Result<PredictedLosses> {
    let mut reader = csv::Reader::from_path(path).map_err(|_| missing(path))?;
    let mut out = PredictedLosses {
        model: Vec::new(),
        linearized: Vec::new(),
    };
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 4 {
            return Err(Error::InvalidArgument(format!("{}:{line}: expected 4 fields", path.display())));
        }
        let table = match parse_field::<PredictionMode>(path, line, "mode", &rec[3])? {
            PredictionMode::Model => &mut out.model,
            PredictionMode::Linearized => &mut out.linearized,
        };
        place(
            table,
            parse_field(path, line, "step", &rec[0])?,
            parse_field(path, line, "agent", &rec[1])?,
            parse_field(path, line, "loss", &rec[2])?,
        );
    }
    Ok(out)
}

/// Comparison of both prediction modes against the observed losses.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub model: LossComparison,
    pub linearized: LossComparison,
    pub steps: usize,
    pub agents: usize,
}

impl CompareReport {
    pub fn to_key_values(&self) -> String {
        let mut s = format!("steps={}\nagents={}\n", self.steps, self.agents);
        for (tag, c) in [("model", &self.model), ("linearized", &self.linearized)] {
            s += &format!("{tag}.max_rel_error={}\n{tag}.mean_rel_error={}\n", c.max, c.mean);
            for (q, (mx, mn)) in c.per_agent_max.iter().zip(&c.per_agent_mean).enumerate() {
                s += &format!("{tag}.agent{q}.max_rel_error={mx}\n{tag}.agent{q}.mean_rel_error={mn}\n");
            }
        }
        s
    }
}

/// Joins `observed.csv` and `predicted.csv` in `dir`, writes `compare.txt`
/// and `plot.svg`.
pub fn compare_dir(dir: &Path, title: &str) -> Result<CompareReport> {
    let observed = read_observed_csv(&dir.join(OBSERVED_CSV))?;
    let predicted = read_predicted_csv(&dir.join(PREDICTED_CSV))?;
    let report = CompareReport {
        model: compare_losses(&observed, &predicted.model)?,
        linearized: compare_losses(&observed, &predicted.linearized)?,
        steps: observed.len() - 1,
        agents: observed[0].len(),
    };
    fs::write(dir.join(COMPARE_TXT), report.to_key_values())?;
    fs::write(dir.join(PLOT_SVG), loss_chart(title, &observed, &predicted.model))?;
    Ok(report)
}

/// Compares the artifacts left by `simulate` and `predict`.
pub fn compare(cfg: &ExperimentConfig) -> Result<CompareReport> {
    cfg.validate()?;
    let dir = &cfg.output.dir;
    for f in [OBSERVED_CSV, PREDICTED_CSV] {
        if !dir.join(f).is_file() {
            return Err(missing(&dir.join(f)));
        }
    }
    let t = &cfg.training;
    let title = format!("{} on {} (observed vs predicted)", t.algorithm, t.topology);
    compare_dir(dir, &title)
}

/// Stability audit of the configured linearized flow; writes `stability.txt`.
pub fn stability(cfg: &ExperimentConfig) -> Result<StabilityReport> {
    let problem = Problem::from_config(cfg)?;
    let anchor = problem.anchor()?;
    let t = &cfg.training;
    let report = bibo_report(
        t.algorithm,
        problem.weights.as_mat(),
        &anchor,
        t.step_size,
        &StabilityTolerances::default(),
        cfg.prediction.dense_cap,
    )?;
    let dir = prepare_dir(cfg)?;
    fs::write(dir.join(STABILITY_TXT), report.to_key_values())?;
    Ok(report)
}
