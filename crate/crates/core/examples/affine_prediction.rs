//! For an affine model the linearized flow is exact up to discretization:
//! the closed-form solution tracks every DGD iterate.

use peerflow::data::{gaussian_blobs, split_iid};
use peerflow::distopt::{run_training, sync_init, Algorithm};
use peerflow::experiment::compare_losses;
use peerflow::flow::{build_anchor, build_system, predict_losses, solve_closed_form, ClosedFormOptions};
use peerflow::mixing::{build_topology, metropolis_hastings, Topology};
use peerflow::model::ModelSpec;

fn main() -> peerflow::Result<()> {
    let (agents, per_agent, dim, steps) = (8, 50, 64, 200);
    let source = gaussian_blobs(agents * per_agent, dim, 0.3, 0)?;
    let data = split_iid(&source, agents, per_agent, 1)?;
    let spec = ModelSpec::affine(dim)?;
    let theta0 = sync_init(&spec, 2, agents);
    let w = metropolis_hastings(&build_topology(&Topology::Complete, agents)?);
    let eta = 0.05;

    let anchor = build_anchor(&spec, &theta0, &data)?;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64).collect();
    for alg in Algorithm::ALL {
        let observed = run_training(alg, steps, eta, &theta0, &spec, &data, &w, false)?;
        let system = build_system(alg, &anchor, w.as_mat(), eta)?;
        let states = solve_closed_form(&system, &times, &ClosedFormOptions::default())?;
        let predicted = predict_losses(&anchor, &spec, &data, &states)?;
        let cmp = compare_losses(&observed.losses, &predicted.model)?;
        let g = observed.global_losses();
        println!(
            "{alg}: observed loss {:.4} -> {:.4}, relative prediction error max {:.3e} mean {:.3e}",
            g[0], g[steps], cmp.max, cmp.mean
        );
    }
    Ok(())
}
