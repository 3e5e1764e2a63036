//! Runs DGD, ATC and CTA on the same half-moons problem over a cycle.

use peerflow::data::{half_moons, split_iid};
use peerflow::distopt::{run_training, sync_init, Algorithm};
use peerflow::mixing::{build_topology, metropolis_hastings, Topology};
use peerflow::model::{Activation, ModelSpec};

fn main() -> peerflow::Result<()> {
    let (agents, per_agent, steps) = (6, 30, 300);
    let source = half_moons(agents * per_agent, 0.1, 0)?;
    let data = split_iid(&source, agents, per_agent, 1)?;
    let spec = ModelSpec::ntk_mlp_uniform(2, &[64], 1, Activation::Sigmoid, 1.0, 0.1)?;
    let theta0 = sync_init(&spec, 2, agents);
    let w = metropolis_hastings(&build_topology(&Topology::Cycle, agents)?);

    println!("{agents} agents, {} parameters each, {steps} steps of η = 0.5", spec.num_params());
    for alg in Algorithm::ALL {
        let rec = run_training(alg, steps, 0.5, &theta0, &spec, &data, &w, true)?;
        let g = rec.global_losses();
        let last = rec.params.as_ref().unwrap().last().unwrap();
        // disagreement between agents: max distance of a block from the average
        let p = spec.num_params();
        let mean: Vec<f64> = (0..p).map(|i| (0..agents).map(|q| last[q * p + i]).sum::<f64>() / agents as f64).collect();
        let spread = (0..agents)
            .map(|q| (0..p).map(|i| (last[q * p + i] - mean[i]).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        println!(
            "{alg}: loss {:.4} -> {:.4} (step 100: {:.4}), consensus spread {spread:.2e}",
            g[0], g[steps], g[100]
        );
    }
    Ok(())
}
