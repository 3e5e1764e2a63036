//! End-to-end experiment through the config-driven pipeline: simulate a
//! neural network under DGD, predict its losses from the linearized flow and
//! write the comparison report and chart.
//!
//! `cargo run --release --example neural_prediction -- [out_dir]`

use std::path::PathBuf;

use peerflow::experiment::{self, ExperimentConfig};

const CONFIG: &str = r#"
[model]
kind = "ntk-mlp"
hidden_widths = [128]

[data]
source = "half-moons"
agents = 5
samples_per_agent = 40
seed = 3

[training]
topology = "cycle"
algorithm = "dgd"
step_size = 0.5
steps = 150
"#;

fn main() -> peerflow::Result<()> {
    let mut cfg = ExperimentConfig::from_toml(CONFIG, "inline.toml".as_ref())?;
    cfg.output.dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("peerflow-neural-prediction"));

    let observed = experiment::simulate(&cfg)?;
    let g = observed.global_losses();
    println!("simulated: global loss {:.4} -> {:.4}", g[0], g[g.len() - 1]);

    let prediction = experiment::predict(&cfg)?;
    println!("predicted with the {} solver", prediction.solver);

    let report = experiment::compare(&cfg)?;
    print!("{}", report.to_key_values());
    println!("artifacts in {}", cfg.output.dir.display());
    Ok(())
}
