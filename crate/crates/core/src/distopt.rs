//! Synchronous DGD / ATC / CTA rounds on stacked agent parameters.
//!
//! Gradients use the stacked convention: agent `q`'s block of the gradient
//! of the global objective `L = (1/Q) Σ_q L_q` is
//! `(1/(DQ)) · J_qᵀ (f_q - y_q)`, so the `1/Q` factor is part of every step.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use crate::data::AgentData;
use crate::data::LabeledDataset;
use crate::error::{check_len, Error, Result};
use crate::mixing::{LiftedOperator, MixingMatrix};
use crate::model::{self, init_params, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Dgd,
    Atc,
    Cta,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Dgd, Algorithm::Atc, Algorithm::Cta];
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dgd" => Ok(Algorithm::Dgd),
            "atc" => Ok(Algorithm::Atc),
            "cta" => Ok(Algorithm::Cta),
            _ => Err(Error::InvalidArgument(format!(
                "unknown algorithm `{s}` (expected dgd, atc or cta)"
            ))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Dgd => "dgd",
            Algorithm::Atc => "atc",
            Algorithm::Cta => "cta",
        })
    }
}

/// `ϑ = [θ_1ᵀ, …, θ_Qᵀ]ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedParams {
    num_agents: usize,
    block_dim: usize,
    theta: Vec<f64>,
}

impl StackedParams {
    pub fn new(num_agents: usize, block_dim: usize, theta: Vec<f64>) -> Result<Self> {
        check_len("stacked parameters", num_agents * block_dim, theta.len())?;
        Ok(StackedParams {
            num_agents,
            block_dim,
            theta,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.theta
    }

    pub fn block(&self, q: usize) -> &[f64] {
        &self.theta[q * self.block_dim..(q + 1) * self.block_dim]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.theta.chunks(self.block_dim)
    }

    /// Per-coordinate mean over agents.
    pub fn agent_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.block_dim];
        for b in self.blocks() {
            for (m, v) in mean.iter_mut().zip(b) {
                *m += v;
            }
        }
        let q = self.num_agents as f64;
        mean.iter_mut().for_each(|m| *m /= q);
        mean
    }
}

/// One initialization drawn from `seed` and replicated to every agent.
pub fn sync_init(spec: &ModelSpec, seed: u64, num_agents: usize) -> StackedParams {
    let one = init_params(spec, seed).0;
    let theta = (0..num_agents).flat_map(|_| one.iter().copied()).collect();
    StackedParams {
        num_agents,
        block_dim: spec.num_params(),
        theta,
    }
}

fn check_problem(spec: &ModelSpec, theta: &StackedParams, data: &AgentData) -> Result<()> {
    check_len("agent count", theta.num_agents(), data.num_agents())?;
    check_len("parameter block", spec.num_params(), theta.block_dim())?;
    check_len("input dimension", spec.input_dim(), data.input_dim())?;
    check_len("output dimension", spec.output_dim(), data.output_dim())
}

/// `(1/2D) Σ_i ‖f(x_i; θ) - y_i‖²` for one agent.
pub fn local_mse_loss(spec: &ModelSpec, params: &[f64], data: &LabeledDataset) -> Result<f64> {
    let mut sum = 0.0;
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        let f = model::forward_slice(spec, params, x)?;
        sum += f.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(sum / (2.0 * data.len() as f64))
}

/// Each agent's local loss evaluated at its own parameters.
pub fn per_agent_losses(spec: &ModelSpec, theta: &StackedParams, data: &AgentData) -> Result<Vec<f64>> {
    check_problem(spec, theta, data)?;
    (0..theta.num_agents())
        .map(|q| local_mse_loss(spec, theta.block(q), data.agent(q)))
        .collect()
}

/// `(1/Q) Σ_q L_q(θ_q)`.
pub fn global_mse_loss(spec: &ModelSpec, theta: &StackedParams, data: &AgentData) -> Result<f64> {
    let losses = per_agent_losses(spec, theta, data)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// `scale · Σ_i J(x_i)ᵀ (f(x_i) - y_i)` for one agent.
pub fn local_gradient(
    spec: &ModelSpec,
    params: &[f64],
    data: &LabeledDataset,
    scale: f64,
) -> Result<Vec<f64>> {
    let mut residuals = Vec::with_capacity(data.len() * spec.output_dim());
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        let f = model::forward_slice(spec, params, x)?;
        residuals.extend(f.iter().zip(y).map(|(a, b)| a - b));
    }
    let mut g = model::vjp_slice(spec, params, &data.inputs, &residuals)?;
    g.iter_mut().for_each(|v| *v *= scale);
    Ok(g)
}

/// Gradient of the global objective with respect to the stacked parameters.
pub fn stacked_gradient(spec: &ModelSpec, theta: &StackedParams, data: &AgentData) -> Result<Vec<f64>> {
    check_problem(spec, theta, data)?;
    let scale = 1.0 / (data.samples_per_agent() * data.num_agents()) as f64;
    let mut out = Vec::with_capacity(theta.as_slice().len());
    for q in 0..theta.num_agents() {
        out.extend(local_gradient(spec, theta.block(q), data.agent(q), scale)?);
    }
    Ok(out)
}

fn check_finite(v: &[f64], step: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: "distributed update",
            step,
        })
    }
}

/// Mixing operator `W ⊗ I_P` plus the problem it acts on.
pub struct Trainer<'a> {
    spec: &'a ModelSpec,
    data: &'a AgentData,
    mixing: LiftedOperator,
    step_size: f64,
}

impl<'a> Trainer<'a> {
    pub fn new(spec: &'a ModelSpec, data: &'a AgentData, w: &MixingMatrix, step_size: f64) -> Result<Self> {
        if !(step_size > 0.0) || !step_size.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {step_size}"
            )));
        }
        check_len("mixing matrix size", data.num_agents(), w.num_agents())?;
        Ok(Trainer {
            spec,
            data,
            mixing: w.lift(spec.num_params()),
            step_size,
        })
    }

    /// One synchronous round; `step` only labels diagnostics.
    pub fn step(&self, algorithm: Algorithm, theta: &StackedParams, step: usize) -> Result<StackedParams> {
        check_problem(self.spec, theta, self.data)?;
        let eta = self.step_size;
        let next = match algorithm {
            // 𝒲ϑ - η∇L(ϑ)
            Algorithm::Dgd => {
                let mut mixed = self.mixing.apply(theta.as_slice())?;
                let g = stacked_gradient(self.spec, theta, self.data)?;
                mixed.iter_mut().zip(&g).for_each(|(m, g)| *m -= eta * g);
                mixed
            }
            // 𝒲(ϑ - η∇L(ϑ))
            Algorithm::Atc => {
                let g = stacked_gradient(self.spec, theta, self.data)?;
                let local: Vec<f64> = theta
                    .as_slice()
                    .iter()
                    .zip(&g)
                    .map(|(t, g)| t - eta * g)
                    .collect();
                self.mixing.apply(&local)?
            }
            // ψ = 𝒲ϑ; ψ - η∇L(ψ)
            Algorithm::Cta => {
                let mixed = StackedParams {
                    theta: self.mixing.apply(theta.as_slice())?,
                    ..*theta
                };
                let g = stacked_gradient(self.spec, &mixed, self.data)?;
                let mut out = mixed.theta;
                out.iter_mut().zip(&g).for_each(|(m, g)| *m -= eta * g);
                out
            }
        };
        check_finite(&next, step)?;
        Ok(StackedParams {
            theta: next,
            ..*theta
        })
    }
}

pub fn dgd_step(spec: &ModelSpec, theta: &StackedParams, data: &AgentData, w: &MixingMatrix, eta: f64) -> Result<StackedParams> {
    Trainer::new(spec, data, w, eta)?.step(Algorithm::Dgd, theta, 0)
}

pub fn atc_step(spec: &ModelSpec, theta: &StackedParams, data: &AgentData, w: &MixingMatrix, eta: f64) -> Result<StackedParams> {
    Trainer::new(spec, data, w, eta)?.step(Algorithm::Atc, theta, 0)
}

pub fn cta_step(spec: &ModelSpec, theta: &StackedParams, data: &AgentData, w: &MixingMatrix, eta: f64) -> Result<StackedParams> {
    Trainer::new(spec, data, w, eta)?.step(Algorithm::Cta, theta, 0)
}

/// Per-step, per-agent losses (row `k` is step `k`, `k = 0..=K`) and
/// optionally the stacked parameters at each step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub algorithm: Algorithm,
    pub step_size: f64,
    pub losses: Vec<Vec<f64>>,
    pub params: Option<Vec<Vec<f64>>>,
}

impl TrajectoryRecord {
    pub fn num_steps(&self) -> usize {
        self.losses.len().saturating_sub(1)
    }

    pub fn num_agents(&self) -> usize {
        self.losses.first().map_or(0, Vec::len)
    }

    pub fn global_losses(&self) -> Vec<f64> {
        self.losses
            .iter()
            .map(|row| row.iter().sum::<f64>() / row.len() as f64)
            .collect()
    }

    /// CSV with header `step,agent,loss`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "agent", "loss"])?;
        for (k, row) in self.losses.iter().enumerate() {
            for (q, loss) in row.iter().enumerate() {
                w.write_record([k.to_string(), q.to_string(), loss.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Raw little-endian `f64` dump: one row of `Q·P` values per step.
    pub fn write_params_bin(&self, path: &Path) -> Result<()> {
        let rows = self
            .params
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("trajectory was recorded without parameters".into()))?;
        write_f64_rows(path, rows)
    }
}

pub fn write_f64_rows(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in rows {
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a dump written by [`write_f64_rows`] given the row length.
pub fn read_f64_rows(path: &Path, row_len: usize) -> Result<Vec<Vec<f64>>> {
    let bytes = std::fs::read(path)?;
    if row_len == 0 || bytes.len() % (8 * row_len) != 0 {
        return Err(Error::InvalidArgument(format!(
            "{}: {} bytes is not a whole number of {row_len}-value rows",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks(8 * row_len)
        .map(|row| {
            row.chunks(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect())
}

/// Applies `steps` rounds of `algorithm`, recording losses at `k = 0..=steps`.
pub fn run_training(
    algorithm: Algorithm,
    steps: usize,
    step_size: f64,
    theta0: &StackedParams,
    spec: &ModelSpec,
    data: &AgentData,
    w: &MixingMatrix,
    record_params: bool,
) -> Result<TrajectoryRecord> {
    if steps == 0 {
        return Err(Error::InvalidArgument("run_training needs at least one step".into()));
    }
    let trainer = Trainer::new(spec, data, w, step_size)?;
    let mut theta = theta0.clone();
    let mut losses = vec![per_agent_losses(spec, &theta, data)?];
    let mut params = record_params.then(|| vec![theta.as_slice().to_vec()]);
    for k in 1..=steps {
        theta = trainer.step(algorithm, &theta, k)?;
        losses.push(per_agent_losses(spec, &theta, data)?);
        if let Some(p) = params.as_mut() {
            p.push(theta.as_slice().to_vec());
        }
    }
    Ok(TrajectoryRecord {
        algorithm,
        step_size,
        losses,
        params,
    })
}

/// Relative Frobenius drift `‖Θ̂_end - Θ̂_0‖ / ‖Θ̂_0‖` of the empirical NTK on
/// `data` after `steps` rounds of single-agent full-batch gradient descent.
pub fn ntk_drift(
    spec: &ModelSpec,
    init: &model::ParamVector,
    data: &LabeledDataset,
    step_size: f64,
    steps: usize,
) -> Result<f64> {
    let agents = AgentData::new(vec![data.clone()])?;
    let theta0 = StackedParams::new(1, spec.num_params(), init.0.clone())?;
    let w = MixingMatrix::identity(1);
    let trainer = Trainer::new(spec, &agents, &w, step_size)?;
    let mut theta = theta0;
    for k in 1..=steps {
        theta = trainer.step(Algorithm::Dgd, &theta, k)?;
    }
    let k0 = model::empirical_ntk(spec, init, &data.inputs, &data.inputs)?;
    let end = model::ParamVector(theta.into_vec());
    let k1 = model::empirical_ntk(spec, &end, &data.inputs, &data.inputs)?;
    Ok((&k1 - &k0).norm_l2() / k0.norm_l2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gaussian_blobs, split_iid};
    use crate::mixing::{build_topology, metropolis_hastings, Topology};
    use crate::model::Activation;

    fn affine_problem(q: usize, d: usize) -> (ModelSpec, AgentData) {
        let src = gaussian_blobs(q * d, 5, 0.3, 1).unwrap();
        (ModelSpec::affine(5).unwrap(), split_iid(&src, q, d, 2).unwrap())
    }

    #[test]
    fn sync_init_replicates() {
        let spec = ModelSpec::affine(4).unwrap();
        let t = sync_init(&spec, 3, 3);
        assert_eq!(t.block(0), t.block(1));
        assert_eq!(t.block(1), t.block(2));
        assert_ne!(sync_init(&spec, 4, 3), t);
    }

    #[test]
    fn loss_examples() {
        let spec = ModelSpec::affine(2).unwrap();
        let ds = LabeledDataset::new(vec![vec![3.0, -1.0]], vec![vec![1.0]]).unwrap();
        let data = AgentData::new(vec![ds.clone(), ds]).unwrap();
        let theta = StackedParams::new(2, 3, vec![0.0; 6]).unwrap();
        assert_eq!(per_agent_losses(&spec, &theta, &data).unwrap(), vec![0.5, 0.5]);
        // perfect fit: w = 0, b = 1
        let fit = StackedParams::new(2, 3, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(global_mse_loss(&spec, &fit, &data).unwrap(), 0.0);
        assert!(stacked_gradient(&spec, &fit, &data).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn global_is_average() {
        let spec = ModelSpec::affine(1).unwrap();
        let a = LabeledDataset::new(vec![vec![0.0]], vec![vec![2f64.sqrt()]]).unwrap();
        let b = LabeledDataset::new(vec![vec![0.0]], vec![vec![6f64.sqrt()]]).unwrap();
        let data = AgentData::new(vec![a, b]).unwrap();
        let theta = StackedParams::new(2, 2, vec![0.0; 4]).unwrap();
        let l = per_agent_losses(&spec, &theta, &data).unwrap();
        assert!((l[0] - 1.0).abs() < 1e-15 && (l[1] - 3.0).abs() < 1e-15);
        assert!((global_mse_loss(&spec, &theta, &data).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (spec, data) = affine_problem(3, 4);
        let theta = StackedParams::new(3, 6, (0..18).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let g = stacked_gradient(&spec, &theta, &data).unwrap();
        let h = 1e-6;
        for i in 0..18 {
            let mut plus = theta.as_slice().to_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            let lp = global_mse_loss(&spec, &StackedParams::new(3, 6, plus).unwrap(), &data).unwrap();
            let lm = global_mse_loss(&spec, &StackedParams::new(3, 6, minus).unwrap(), &data).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1e-3), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn single_agent_gradient_is_local_mean() {
        let (spec, data) = affine_problem(1, 6);
        let theta = sync_init(&spec, 0, 1);
        let g = stacked_gradient(&spec, &theta, &data).unwrap();
        let local = local_gradient(&spec, theta.block(0), data.agent(0), 1.0 / 6.0).unwrap();
        assert_eq!(g, local);
    }

    #[test]
    fn zero_gradient_steps_are_pure_mixing() {
        let spec = ModelSpec::affine(1).unwrap();
        let ds = LabeledDataset::new(vec![vec![1.0]], vec![vec![2.0]]).unwrap();
        let data = AgentData::new(vec![ds.clone(), ds.clone(), ds]).unwrap();
        let w = metropolis_hastings(&build_topology(&Topology::Star, 3).unwrap());
        // every agent fits y = 2 exactly but with different (w, b)
        let theta = StackedParams::new(3, 2, vec![2.0, 0.0, 0.0, 2.0, 1.0, 1.0]).unwrap();
        let mixed = w.lift(2).apply(theta.as_slice()).unwrap();
        for alg in Algorithm::ALL {
            let next = Trainer::new(&spec, &data, &w, 0.1).unwrap().step(alg, &theta, 0).unwrap();
            for (a, b) in next.as_slice().iter().zip(&mixed) {
                assert!((a - b).abs() < 1e-15, "{alg}");
            }
            let (m0, m1) = (theta.agent_mean(), next.agent_mean());
            for (a, b) in m0.iter().zip(&m1) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_agents_match_centralized_gd() {
        // one step with identical θ and data equals GD with step η/Q on the local loss
        let src = gaussian_blobs(5, 3, 0.2, 9).unwrap();
        let data = AgentData::new(vec![src.clone(); 4]).unwrap();
        let spec = ModelSpec::ntk_mlp_uniform(3, &[6], 1, Activation::Sigmoid, 1.0, 0.1).unwrap();
        let theta = sync_init(&spec, 5, 4);
        let w = metropolis_hastings(&build_topology(&Topology::Cycle, 4).unwrap());
        let eta = 0.3;
        let local = local_gradient(&spec, theta.block(0), &src, 1.0 / 5.0).unwrap();
        let expect: Vec<f64> = theta.block(0).iter().zip(&local).map(|(t, g)| t - eta / 4.0 * g).collect();
        for alg in Algorithm::ALL {
            let next = Trainer::new(&spec, &data, &w, eta).unwrap().step(alg, &theta, 0).unwrap();
            for q in 0..4 {
                for (a, b) in next.block(q).iter().zip(&expect) {
                    assert!((a - b).abs() < 1e-13, "{alg}");
                }
            }
        }
    }

    #[test]
    fn training_records_and_rejects() {
        let (spec, data) = affine_problem(2, 3);
        let w = MixingMatrix::identity(2);
        let theta = sync_init(&spec, 1, 2);
        let rec = run_training(Algorithm::Dgd, 1, 1e-3, &theta, &spec, &data, &w, true).unwrap();
        assert_eq!(rec.losses.len(), 2);
        assert_eq!(rec.params.as_ref().unwrap().len(), 2);
        assert!(run_training(Algorithm::Dgd, 0, 1e-3, &theta, &spec, &data, &w, false).is_err());
        assert!(Trainer::new(&spec, &data, &w, -1.0).is_err());

        let mut csv = Vec::new();
        rec.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("step,agent,loss\n0,0,"));
        assert_eq!(text.lines().count(), 1 + 2 * 2);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        rec.write_params_bin(&path).unwrap();
        assert_eq!(read_f64_rows(&path, 12).unwrap(), rec.params.unwrap());
    }

    #[test]
    fn divergence_is_reported() {
        let (spec, data) = affine_problem(2, 3);
        let w = MixingMatrix::identity(2);
        let theta = sync_init(&spec, 1, 2);
        let err = run_training(Algorithm::Atc, 400, 1e6, &theta, &spec, &data, &w, false).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    }
}
