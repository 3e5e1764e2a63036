//! Per-agent loss curves from a predicted parameter trajectory.

use std::fmt;
use std::io::Write;

use super::LinearizationAnchor;
use crate::data::AgentData;
use crate::distopt::{per_agent_losses, StackedParams};
use crate::error::{check_len, Result};
use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PredictionMode {
    /// Predicted parameters substituted into the true model.
    Model,
    /// Linearized outputs `𝖿₀ + J₀(ϑ_t - ϑ₀)`.
    Linearized,
}

impl fmt::Display for PredictionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictionMode::Model => "model",
            PredictionMode::Linearized => "linearized",
        })
    }
}

impl std::str::FromStr for PredictionMode {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(PredictionMode::Model),
            "linearized" => Ok(PredictionMode::Linearized),
            _ => Err(crate::Error::InvalidArgument(format!("unknown prediction mode `{s}`"))),
        }
    }
}

/// `losses[k][q]` for both modes.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedLosses {
    pub model: Vec<Vec<f64>>,
    pub linearized: Vec<Vec<f64>>,
}

impl PredictedLosses {
    pub fn mode(&self, mode: PredictionMode) -> &[Vec<f64>] {
        match mode {
            PredictionMode::Model => &self.model,
            PredictionMode::Linearized => &self.linearized,
        }
    }

    /// CSV with header `step,agent,loss,mode`, all `model` rows first.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "agent", "loss", "mode"])?;
        for mode in [PredictionMode::Model, PredictionMode::Linearized] {
            let tag = mode.to_string();
            for (k, row) in self.mode(mode).iter().enumerate() {
                for (q, loss) in row.iter().enumerate() {
                    w.write_record([k.to_string(), q.to_string(), loss.to_string(), tag.clone()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-agent MSE losses along `trajectory` (one stacked state per step).
pub fn predict_losses(
    anchor: &LinearizationAnchor,
    spec: &ModelSpec,
    data: &AgentData,
    trajectory: &[Vec<f64>],
) -> Result<PredictedLosses> {
    let (q, p) = (anchor.num_agents(), anchor.block_dim());
    let rows = anchor.rows_per_agent();
    let d = anchor.samples_per_agent() as f64;
    let mut model = Vec::with_capacity(trajectory.len());
    let mut linearized = Vec::with_capacity(trajectory.len());
    for theta in trajectory {
        check_len("predicted state", q * p, theta.len())?;
        let stacked = StackedParams::new(q, p, theta.clone())?;
        model.push(per_agent_losses(spec, &stacked, data)?);
        let f = anchor.linearized_outputs(theta);
        linearized.push(
            f.chunks(rows)
                .zip(anchor.targets().chunks(rows))
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / (2.0 * d))
                .collect(),
        );
    }
    Ok(PredictedLosses { model, linearized })
}
