//! Stability audit of the linearized flow for each algorithm, plus a model
//! whose data never touches one input coordinate.

use peerflow::data::{gaussian_blobs, split_iid, AgentData, LabeledDataset};
use peerflow::distopt::{sync_init, Algorithm};
use peerflow::flow::{build_anchor, DEFAULT_DENSE_CAP};
use peerflow::mixing::{build_topology, metropolis_hastings, Topology};
use peerflow::model::ModelSpec;
use peerflow::stability::{bibo_report, StabilityTolerances};

fn main() -> peerflow::Result<()> {
    let (agents, per_agent, dim) = (6, 20, 10);
    let data = split_iid(&gaussian_blobs(agents * per_agent, dim, 0.3, 0)?, agents, per_agent, 1)?;
    let spec = ModelSpec::affine(dim)?;
    let anchor = build_anchor(&spec, &sync_init(&spec, 2, agents), &data)?;
    let w = metropolis_hastings(&build_topology(&Topology::Cycle, agents)?);
    let tol = StabilityTolerances::default();

    for alg in Algorithm::ALL {
        let r = bibo_report(alg, w.as_mat(), &anchor, 0.1, &tol, DEFAULT_DENSE_CAP)?;
        println!(
            "{alg}: verdict {}{} abscissa {:.3e} minimality {:.3}",
            r.verdict,
            if r.informational { " (informational)" } else { "" },
            r.spectral_abscissa,
            r.minimality
        );
    }

    // zero out the last feature everywhere: its weight never moves
    let dead = AgentData::new(
        data.agents()
            .iter()
            .map(|a| {
                let inputs = a.inputs.iter().map(|x| {
                    let mut x = x.clone();
                    x[dim - 1] = 0.0;
                    x
                });
                LabeledDataset::new(inputs.collect(), a.targets.clone())
            })
            .collect::<peerflow::Result<Vec<_>>>()?,
    )?;
    let anchor = build_anchor(&spec, &sync_init(&spec, 2, agents), &dead)?;
    let r = bibo_report(Algorithm::Dgd, w.as_mat(), &anchor, 0.1, &tol, DEFAULT_DENSE_CAP)?;
    println!("\nwith a dead input coordinate:");
    print!("{}", r.to_key_values());
    Ok(())
}
