//! NTK-linearized gradient flows for DGD, ATC and CTA.
//!
//! Linearizing every agent's outputs around the initial parameters,
//! `𝖿̄_t = 𝖿₀ + J₀(ϑ_t - ϑ₀)`, turns the MSE gradient flows into the
//! time-invariant system `ϑ̇ = Aϑ + u` with `Ψ₀ = J₀ᵀJ₀`, `c = η/(DQ)` and
//!
//! | algorithm | `A`              | `u`                            |
//! |-----------|------------------|--------------------------------|
//! | DGD       | `Ŵ - cΨ₀`        | `-c[J₀ᵀ(𝖿₀ - 𝗒) - Ψ₀ϑ₀]`        |
//! | ATC       | `Ŵ - c𝒲Ψ₀`       | `-c𝒲[J₀ᵀ(𝖿₀ - 𝗒) - Ψ₀ϑ₀]`       |
//! | CTA       | `Ŵ - cΨ₀𝒲`       | `-c[J₀ᵀ(𝖿₀ - 𝗒) - Ψ₀ϑ₀]`        |
//!
//! where `𝒲 = W ⊗ I_P` and `Ŵ = (W - I) ⊗ I_P`. The step size sits inside
//! `A` and `u`, so one unit of flow time corresponds to one discrete round.
//!
//! `J₀` is block diagonal (agent `q`'s outputs only see `θ_q`); only the
//! diagonal blocks are stored.

mod expm;
mod integrate;
mod predict;
mod solve;

use faer::linalg::matmul::matmul;
use faer::{get_global_parallelism, Accum, Mat, MatRef};

pub use expm::{expm, expm_owned, norm1};
pub use integrate::{integrate_rk4, FnField, LinearizedFlow, Loss, VectorField};
pub use predict::{predict_losses, PredictedLosses, PredictionMode};
pub use solve::{
    data_subspace_basis, solve_affine_closed_form, solve_closed_form, ClosedFormOptions, DEFAULT_DENSE_CAP,
};

use crate::data::{stack_targets, AgentData};
use crate::distopt::{Algorithm, StackedParams};
use crate::error::{check_len, Error, Result};
use crate::mixing::{LiftMode, LiftedOperator};
use crate::model::{self, ModelSpec};

/// Expansion point of the linearization: per-agent Jacobian blocks, stacked
/// initial outputs `𝖿₀`, stacked labels `𝗒` and `ϑ₀`.
#[derive(Debug, Clone)]
pub struct LinearizationAnchor {
    jacobians: Vec<Mat<f64>>,
    outputs0: Vec<f64>,
    targets: Vec<f64>,
    theta0: Vec<f64>,
    samples_per_agent: usize,
}

impl LinearizationAnchor {
    /// Assembles an anchor from raw parts. Every block must be
    /// `rows × P` with the same shape; vectors are stacked agent-major.
    pub fn new(
        jacobians: Vec<Mat<f64>>,
        outputs0: Vec<f64>,
        targets: Vec<f64>,
        theta0: Vec<f64>,
        samples_per_agent: usize,
    ) -> Result<Self> {
        let first = jacobians
            .first()
            .ok_or_else(|| Error::InvalidArgument("anchor needs at least one agent".into()))?;
        let (rows, p) = (first.nrows(), first.ncols());
        for j in &jacobians {
            check_len("jacobian block rows", rows, j.nrows())?;
            check_len("jacobian block columns", p, j.ncols())?;
        }
        let q = jacobians.len();
        check_len("stacked outputs", q * rows, outputs0.len())?;
        check_len("stacked targets", q * rows, targets.len())?;
        check_len("stacked parameters", q * p, theta0.len())?;
        if samples_per_agent == 0 || rows % samples_per_agent != 0 {
            return Err(Error::InvalidArgument(format!(
                "{rows} output rows per agent is not a multiple of D = {samples_per_agent}"
            )));
        }
        Ok(LinearizationAnchor {
            jacobians,
            outputs0,
            targets,
            theta0,
            samples_per_agent,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.jacobians.len()
    }

    /// `P`
    pub fn block_dim(&self) -> usize {
        self.jacobians[0].ncols()
    }

    /// `M·D`
    pub fn rows_per_agent(&self) -> usize {
        self.jacobians[0].nrows()
    }

    pub fn samples_per_agent(&self) -> usize {
        self.samples_per_agent
    }

    pub fn state_dim(&self) -> usize {
        self.num_agents() * self.block_dim()
    }

    pub fn jacobian(&self, q: usize) -> MatRef<'_, f64> {
        self.jacobians[q].as_ref()
    }

    pub fn outputs0(&self) -> &[f64] {
        &self.outputs0
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn theta0(&self) -> &[f64] {
        &self.theta0
    }

    /// `J₀ v`, block by block.
    pub fn apply_jacobian(&self, v: &[f64]) -> Vec<f64> {
        let (p, rows) = (self.block_dim(), self.rows_per_agent());
        let mut out = vec![0.0; self.num_agents() * rows];
        for (q, j) in self.jacobians.iter().enumerate() {
            let dst = &mut out[q * rows..(q + 1) * rows];
            for c in 0..p {
                let x = v[q * p + c];
                if x != 0.0 {
                    for (d, jv) in dst.iter_mut().zip(j.col_as_slice(c)) {
                        *d += jv * x;
                    }
                }
            }
        }
        out
    }

    /// `J₀ᵀ r`, block by block.
    pub fn apply_jacobian_t(&self, r: &[f64]) -> Vec<f64> {
        let (p, rows) = (self.block_dim(), self.rows_per_agent());
        let mut out = vec![0.0; self.state_dim()];
        for (q, j) in self.jacobians.iter().enumerate() {
            let src = &r[q * rows..(q + 1) * rows];
            for c in 0..p {
                out[q * p + c] = j.col_as_slice(c).iter().zip(src).map(|(a, b)| a * b).sum();
            }
        }
        out
    }

    /// `Ψ₀ v = J₀ᵀ J₀ v`.
    pub fn apply_psi(&self, v: &[f64]) -> Vec<f64> {
        self.apply_jacobian_t(&self.apply_jacobian(v))
    }

    /// Linearized outputs `𝖿̄ = 𝖿₀ + J₀(ϑ - ϑ₀)`.
    pub fn linearized_outputs(&self, theta: &[f64]) -> Vec<f64> {
        let delta: Vec<f64> = theta.iter().zip(&self.theta0).map(|(a, b)| a - b).collect();
        let mut out = self.apply_jacobian(&delta);
        out.iter_mut().zip(&self.outputs0).for_each(|(o, f)| *o += f);
        out
    }

    /// Diagonal block `Ψ_q = J_qᵀ J_q`.
    pub fn psi_block(&self, q: usize) -> Mat<f64> {
        let j = self.jacobians[q].as_ref();
        let mut out = Mat::<f64>::zeros(j.ncols(), j.ncols());
        matmul(out.as_mut(), Accum::Replace, j.transpose(), j, 1.0, get_global_parallelism());
        out
    }

    /// Restricts the anchor to the coordinates `θ_q ↦ Bᵀθ_q` for an
    /// orthonormal `B` (`P × r`): blocks become `J_q B`.
    pub fn project(&self, basis: MatRef<'_, f64>) -> Result<LinearizationAnchor> {
        let p = self.block_dim();
        check_len("projection basis rows", p, basis.nrows())?;
        let r = basis.ncols();
        let jacobians = self
            .jacobians
            .iter()
            .map(|j| {
                let mut out = Mat::<f64>::zeros(j.nrows(), r);
                matmul(out.as_mut(), Accum::Replace, j.as_ref(), basis, 1.0, get_global_parallelism());
                out
            })
            .collect();
        let mut theta0 = Vec::with_capacity(self.num_agents() * r);
        for block in self.theta0.chunks(p) {
            for c in 0..r {
                theta0.push((0..p).map(|i| basis[(i, c)] * block[i]).sum());
            }
        }
        LinearizationAnchor::new(
            jacobians,
            self.outputs0.clone(),
            self.targets.clone(),
            theta0,
            self.samples_per_agent,
        )
    }
}

/// Jacobians of every agent's model at its own initial parameters on its
/// own data, with outputs and labels stacked agent-major, sample-major.
pub fn build_anchor(spec: &ModelSpec, theta0: &StackedParams, data: &AgentData) -> Result<LinearizationAnchor> {
    check_len("agent count", theta0.num_agents(), data.num_agents())?;
    check_len("parameter block", spec.num_params(), theta0.block_dim())?;
    let mut jacobians = Vec::with_capacity(data.num_agents());
    let mut outputs0 = Vec::new();
    for (q, agent) in data.agents().iter().enumerate() {
        let params = theta0.block(q);
        jacobians.push(model::jacobian_slice(spec, params, &agent.inputs)?);
        for x in &agent.inputs {
            outputs0.extend(model::forward_slice(spec, params, x)?);
        }
    }
    LinearizationAnchor::new(
        jacobians,
        outputs0,
        stack_targets(data),
        theta0.as_slice().to_vec(),
        data.samples_per_agent(),
    )
}

/// `ϑ̇ = Aϑ + u` for one algorithm, with `A` kept matrix-free until asked.
#[derive(Debug, Clone)]
pub struct LinearFlowSystem {
    algorithm: Algorithm,
    anchor: LinearizationAnchor,
    weights: Mat<f64>,
    mixing: LiftedOperator,
    shifted: LiftedOperator,
    step_size: f64,
    gain: f64,
    forcing: Vec<f64>,
}

/// Builds `A` and `u` for `algorithm` from the anchor and mixing weights.
pub fn build_system(
    algorithm: Algorithm,
    anchor: &LinearizationAnchor,
    weights: MatRef<'_, f64>,
    step_size: f64,
) -> Result<LinearFlowSystem> {
    let q = anchor.num_agents();
    check_len("mixing matrix rows", q, weights.nrows())?;
    check_len("mixing matrix columns", q, weights.ncols())?;
    if !(step_size > 0.0) || !step_size.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive, got {step_size}"
        )));
    }
    let p = anchor.block_dim();
    let weights = weights.to_owned();
    let mixing = LiftedOperator::new(weights.clone(), p, LiftMode::Kron);
    let shifted = LiftedOperator::new(weights.clone(), p, LiftMode::ShiftedKron);
    let gain = step_size / (anchor.samples_per_agent() * q) as f64;

    // J₀ᵀ(𝖿₀ - 𝗒) - Ψ₀ϑ₀ = J₀ᵀ(𝖿₀ - 𝗒 - J₀ϑ₀)
    let j_theta0 = anchor.apply_jacobian(anchor.theta0());
    let residual: Vec<f64> = anchor
        .outputs0()
        .iter()
        .zip(anchor.targets())
        .zip(&j_theta0)
        .map(|((f, y), jt)| f - y - jt)
        .collect();
    let mut forcing = anchor.apply_jacobian_t(&residual);
    if algorithm == Algorithm::Atc {
        forcing = mixing.apply(&forcing)?;
    }
    forcing.iter_mut().for_each(|v| *v *= -gain);

    Ok(LinearFlowSystem {
        algorithm,
        anchor: anchor.clone(),
        weights,
        mixing,
        shifted,
        step_size,
        gain,
        forcing,
    })
}

impl LinearFlowSystem {
    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn anchor(&self) -> &LinearizationAnchor {
        &self.anchor
    }

    pub fn weights(&self) -> MatRef<'_, f64> {
        self.weights.as_ref()
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    /// `η / (DQ)`
    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn dim(&self) -> usize {
        self.anchor.state_dim()
    }

    /// `u`
    pub fn forcing(&self) -> &[f64] {
        &self.forcing
    }

    pub fn theta0(&self) -> &[f64] {
        self.anchor.theta0()
    }

    /// `A v` without forming `A`.
    pub fn apply_state(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("flow state", self.dim(), v.len())?;
        let mut out = self.shifted.apply(v)?;
        let coupling = match self.algorithm {
            Algorithm::Dgd => self.anchor.apply_psi(v),
            Algorithm::Atc => self.mixing.apply(&self.anchor.apply_psi(v))?,
            Algorithm::Cta => self.anchor.apply_psi(&self.mixing.apply(v)?),
        };
        out.iter_mut()
            .zip(&coupling)
            .for_each(|(o, c)| *o -= self.gain * c);
        Ok(out)
    }

    /// `A v + u`.
    pub fn rhs(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.apply_state(v)?;
        out.iter_mut().zip(&self.forcing).for_each(|(o, u)| *o += u);
        Ok(out)
    }

    fn check_cap(&self, cap: usize) -> Result<()> {
        if self.dim() > cap {
            return Err(Error::DenseCapExceeded { dim: self.dim(), cap });
        }
        Ok(())
    }

    /// Writes `A` into the leading `QP × QP` block of `out`.
    fn fill_state_matrix(&self, out: &mut Mat<f64>) {
        let (q, p) = (self.anchor.num_agents(), self.anchor.block_dim());
        for a in 0..q {
            for b in 0..q {
                let c = self.shifted.coefficient(a, b);
                if c != 0.0 {
                    for i in 0..p {
                        out[(a * p + i, b * p + i)] += c;
                    }
                }
            }
        }
        let psi: Vec<Mat<f64>> = (0..q).map(|a| self.anchor.psi_block(a)).collect();
        let mut add_block = |row: usize, col: usize, coef: f64, block: &Mat<f64>| {
            if coef == 0.0 {
                return;
            }
            for j in 0..p {
                let src = block.col_as_slice(j);
                let dst = &mut out.col_as_slice_mut(col * p + j)[row * p..(row + 1) * p];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d -= coef * s;
                }
            }
        };
        for a in 0..q {
            match self.algorithm {
                Algorithm::Dgd => add_block(a, a, self.gain, &psi[a]),
                Algorithm::Atc => {
                    for b in 0..q {
                        add_block(a, b, self.gain * self.weights[(a, b)], &psi[b]);
                    }
                }
                Algorithm::Cta => {
                    for b in 0..q {
                        add_block(a, b, self.gain * self.weights[(a, b)], &psi[a]);
                    }
                }
            }
        }
    }

    /// Dense `A`; refuses when `QP` exceeds `cap`.
    pub fn state_matrix(&self, cap: usize) -> Result<Mat<f64>> {
        self.check_cap(cap)?;
        let n = self.dim();
        let mut a = Mat::<f64>::zeros(n, n);
        self.fill_state_matrix(&mut a);
        Ok(a)
    }

    /// `[[A, u], [0, 0]]`, whose exponential carries the forced response.
    pub fn augmented_matrix(&self, cap: usize) -> Result<Mat<f64>> {
        self.check_cap(cap)?;
        let n = self.dim();
        let mut a = Mat::<f64>::zeros(n + 1, n + 1);
        self.fill_state_matrix(&mut a);
        for (i, u) in self.forcing.iter().enumerate() {
            a[(i, n)] = *u;
        }
        Ok(a)
    }
}

/// Which solver produced a predicted trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    ClosedForm,
    Rk4,
    Auto,
}

impl std::fmt::Display for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Solver::ClosedForm => "closed-form",
            Solver::Rk4 => "rk4",
            Solver::Auto => "auto",
        })
    }
}

/// Solves the linearized flow at `times` with the requested solver.
/// `Auto` picks the closed form when the (possibly reduced) dense dimension
/// fits under `options.dense_cap` and RK4 with step `rk4_dt` otherwise.
/// Returns the states and the solver actually used.
pub fn solve_flow(
    system: &LinearFlowSystem,
    times: &[f64],
    solver: Solver,
    options: &ClosedFormOptions,
    rk4_dt: f64,
) -> Result<(Vec<Vec<f64>>, Solver)> {
    match solver {
        Solver::ClosedForm => Ok((solve_closed_form(system, times, options)?, Solver::ClosedForm)),
        Solver::Rk4 => Ok((
            integrate_rk4(system, system.theta0(), times, rk4_dt)?,
            Solver::Rk4,
        )),
        Solver::Auto => match solve_closed_form(system, times, options) {
            Err(Error::DenseCapExceeded { .. }) => Ok((
                integrate_rk4(system, system.theta0(), times, rk4_dt)?,
                Solver::Rk4,
            )),
            other => Ok((other?, Solver::ClosedForm)),
        },
    }
}
