//! Classical RK4 integration and the general-loss linearized flow.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::solve::check_times;
use super::{LinearFlowSystem, LinearizationAnchor};
use crate::distopt::Algorithm;
use crate::error::{check_len, Error, Result};
use crate::mixing::{LiftMode, LiftedOperator};

/// Autonomous right-hand side `ẏ = F(y)`.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, state: &[f64], out: &mut [f64]) -> Result<()>;
}

impl VectorField for LinearFlowSystem {
    fn dim(&self) -> usize {
        LinearFlowSystem::dim(self)
    }

    fn eval(&self, state: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.rhs(state)?);
        Ok(())
    }
}

/// Wraps a closure as a [`VectorField`].
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnField { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, state: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(state, out);
        Ok(())
    }
}

/// Per-sample loss `ℓ(f, y)` on one sample's `M` outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// `½‖f - y‖²`
    Mse,
    /// Logistic loss on the logit when `M = 1`, softmax cross-entropy otherwise.
    CrossEntropy,
}

fn log_sum_exp(f: &[f64]) -> f64 {
    let m = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + f.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl Loss {
    pub fn value(self, f: &[f64], y: &[f64]) -> f64 {
        match self {
            Loss::Mse => 0.5 * f.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>(),
            Loss::CrossEntropy if f.len() == 1 => {
                // softplus(f) - y·f
                let z = f[0];
                z.max(0.0) + (-z.abs()).exp().ln_1p() - y[0] * z
            }
            Loss::CrossEntropy => {
                let lse = log_sum_exp(f);
                f.iter().zip(y).map(|(z, t)| t * (lse - z)).sum()
            }
        }
    }

    /// `∂ℓ/∂f` written into `out`.
    pub fn gradient(self, f: &[f64], y: &[f64], out: &mut [f64]) {
        match self {
            Loss::Mse => out.iter_mut().zip(f.iter().zip(y)).for_each(|(o, (a, b))| *o = a - b),
            Loss::CrossEntropy if f.len() == 1 => out[0] = 1.0 / (1.0 + (-f[0]).exp()) - y[0],
            Loss::CrossEntropy => {
                let lse = log_sum_exp(f);
                out.iter_mut()
                    .zip(f.iter().zip(y))
                    .for_each(|(o, (z, t))| *o = (z - lse).exp() - t);
            }
        }
    }

    /// Mean of `ℓ` over consecutive `m`-wide rows.
    pub fn mean(self, f: &[f64], y: &[f64], m: usize) -> f64 {
        let n = f.len() / m;
        f.chunks(m).zip(y.chunks(m)).map(|(a, b)| self.value(a, b)).sum::<f64>() / n as f64
    }
}

impl FromStr for Loss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Loss::Mse),
            "cross-entropy" => Ok(Loss::CrossEntropy),
            _ => Err(Error::InvalidArgument(format!("unknown loss `{s}`"))),
        }
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Loss::Mse => "mse",
            Loss::CrossEntropy => "cross-entropy",
        })
    }
}

/// Gradient flow of the linearized model under an arbitrary [`Loss`]:
/// `ϑ̇ = 𝒲̂ϑ - (η/DQ)·(mixing composition)·J₀ᵀ ∂ℓ/∂𝖿 |_{𝖿̄}`.
/// With [`Loss::Mse`] it coincides with [`LinearFlowSystem`].
pub struct LinearizedFlow<'a> {
    algorithm: Algorithm,
    anchor: &'a LinearizationAnchor,
    mixing: LiftedOperator,
    shifted: LiftedOperator,
    gain: f64,
    loss: Loss,
    output_dim: usize,
}

impl<'a> LinearizedFlow<'a> {
    pub fn new(
        algorithm: Algorithm,
        anchor: &'a LinearizationAnchor,
        weights: faer::MatRef<'_, f64>,
        step_size: f64,
        loss: Loss,
    ) -> Result<Self> {
        let q = anchor.num_agents();
        check_len("mixing matrix rows", q, weights.nrows())?;
        check_len("mixing matrix columns", q, weights.ncols())?;
        if !(step_size > 0.0) || !step_size.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {step_size}"
            )));
        }
        let p = anchor.block_dim();
        Ok(LinearizedFlow {
            algorithm,
            anchor,
            mixing: LiftedOperator::new(weights.to_owned(), p, LiftMode::Kron),
            shifted: LiftedOperator::new(weights.to_owned(), p, LiftMode::ShiftedKron),
            gain: step_size / (anchor.samples_per_agent() * q) as f64,
            loss,
            output_dim: anchor.rows_per_agent() / anchor.samples_per_agent(),
        })
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    /// `J₀ᵀ ∂ℓ/∂𝖿` at the linearized outputs of `theta`.
    fn output_gradient(&self, theta: &[f64]) -> Vec<f64> {
        let f = self.anchor.linearized_outputs(theta);
        let m = self.output_dim;
        let mut g = vec![0.0; f.len()];
        for ((gc, fc), yc) in g.chunks_mut(m).zip(f.chunks(m)).zip(self.anchor.targets().chunks(m)) {
            self.loss.gradient(fc, yc, gc);
        }
        self.anchor.apply_jacobian_t(&g)
    }

    /// Per-agent mean loss of the linearized outputs at `theta`.
    pub fn agent_losses(&self, theta: &[f64]) -> Vec<f64> {
        let f = self.anchor.linearized_outputs(theta);
        let rows = self.anchor.rows_per_agent();
        f.chunks(rows)
            .zip(self.anchor.targets().chunks(rows))
            .map(|(a, b)| self.loss.mean(a, b, self.output_dim))
            .collect()
    }
}

impl VectorField for LinearizedFlow<'_> {
    fn dim(&self) -> usize {
        self.anchor.state_dim()
    }

    fn eval(&self, state: &[f64], out: &mut [f64]) -> Result<()> {
        self.shifted.apply_into(state, out)?;
        let descent = match self.algorithm {
            Algorithm::Dgd => self.output_gradient(state),
            Algorithm::Atc => self.mixing.apply(&self.output_gradient(state))?,
            Algorithm::Cta => self.output_gradient(&self.mixing.apply(state)?),
        };
        out.iter_mut().zip(&descent).for_each(|(o, d)| *o -= self.gain * d);
        Ok(())
    }
}

/// RK4 from `y0` at `t = 0`, returning the state at every requested time.
/// Each gap between consecutive times is split into equal substeps no
/// longer than `dt`, so every requested time is hit exactly.
pub fn integrate_rk4<F: VectorField + ?Sized>(
    field: &F,
    y0: &[f64],
    times: &[f64],
    dt: f64,
) -> Result<Vec<Vec<f64>>> {
    let n = field.dim();
    check_len("rk4 initial state", n, y0.len())?;
    check_times(times)?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("rk4 step must be positive, got {dt}")));
    }
    let mut y = y0.to_vec();
    let mut now = 0.0;
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut step = 0usize;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if t < now {
            y.copy_from_slice(y0);
            now = 0.0;
        }
        let span = t - now;
        let substeps = if span > 0.0 { (span / dt - 1e-9).ceil().max(1.0) as usize } else { 0 };
        let h = if substeps > 0 { span / substeps as f64 } else { 0.0 };
        for _ in 0..substeps {
            field.eval(&y, &mut k1)?;
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * h * k1[i];
            }
            field.eval(&tmp, &mut k2)?;
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * h * k2[i];
            }
            field.eval(&tmp, &mut k3)?;
            for i in 0..n {
                tmp[i] = y[i] + h * k3[i];
            }
            field.eval(&tmp, &mut k4)?;
            for i in 0..n {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            step += 1;
            if !y.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "rk4 integration",
                    step,
                });
            }
        }
        now = t;
        out.push(y.clone());
    }
    Ok(out)
}
