//! Builds the standard communication graphs, their Metropolis-Hastings
//! weights and the lifted operator `W ⊗ I_P`.

use peerflow::mixing::{build_topology, metropolis_hastings, spectral_gap, Topology};

fn main() -> peerflow::Result<()> {
    let q = 8;
    for topo in [Topology::Cycle, Topology::Star, Topology::Complete] {
        let graph = build_topology(&topo, q)?;
        let w = metropolis_hastings(&graph);
        println!(
            "{topo:<8} edges={:<3} degrees={:?} gap={:.4}",
            graph.num_edges(),
            graph.degrees(),
            spectral_gap(&w)?
        );
    }

    let w = metropolis_hastings(&build_topology(&Topology::Star, 4)?);
    println!("\nstar weights (Q=4):");
    for i in 0..4 {
        let row: Vec<String> = (0..4).map(|j| format!("{:.3}", w.get(i, j))).collect();
        println!("  [{}]", row.join(", "));
    }

    // Applying the lifted operator mixes parameter blocks without forming the Kronecker product.
    let p = 3;
    let lifted = w.lift(p);
    let theta: Vec<f64> = (0..4 * p).map(|i| (i / p) as f64).collect();
    let mixed = lifted.apply(&theta)?;
    println!("\nagent blocks before mixing: {:?}", theta.chunks(p).map(|b| b[0]).collect::<Vec<_>>());
    println!("agent blocks after mixing:  {:?}", mixed.chunks(p).map(|b| b[0]).collect::<Vec<_>>());
    Ok(())
}
