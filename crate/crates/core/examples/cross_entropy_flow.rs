//! Linearized flow under a logistic loss. There is no closed form here, so
//! the flow is integrated with RK4 and compared against the discrete
//! iteration of the same linearized model.

use peerflow::data::{half_moons, split_iid};
use peerflow::distopt::{sync_init, Algorithm};
use peerflow::flow::{build_anchor, integrate_rk4, LinearizedFlow, Loss, VectorField};
use peerflow::mixing::{build_topology, metropolis_hastings, Topology};
use peerflow::model::{Activation, ModelSpec};

fn main() -> peerflow::Result<()> {
    let agents = 4;
    let data = split_iid(&half_moons(160, 0.1, 0)?, agents, 40, 1)?;
    let spec = ModelSpec::ntk_mlp_uniform(2, &[32], 1, Activation::Sigmoid, 1.0, 0.1)?;
    let anchor = build_anchor(&spec, &sync_init(&spec, 2, agents), &data)?;
    let w = metropolis_hastings(&build_topology(&Topology::Star, agents)?);
    let eta = 0.5;

    let flow = LinearizedFlow::new(Algorithm::Dgd, &anchor, w.as_mat(), eta, Loss::CrossEntropy)?;
    let times: Vec<f64> = (0..=50).map(|k| (4 * k) as f64).collect();
    let states = integrate_rk4(&flow, anchor.theta0(), &times, 0.1)?;

    // Euler steps of size one on the same field are the discrete DGD iterates
    let mut theta = anchor.theta0().to_vec();
    let mut dtheta = vec![0.0; theta.len()];
    println!("{:>5} {:>12} {:>12}", "step", "flow loss", "iterate loss");
    for (k, state) in states.iter().enumerate() {
        if k > 0 {
            for _ in 0..4 {
                flow.eval(&theta, &mut dtheta)?;
                theta.iter_mut().zip(&dtheta).for_each(|(t, d)| *t += d);
            }
        }
        if k % 10 == 0 {
            let mean = |l: Vec<f64>| l.iter().sum::<f64>() / l.len() as f64;
            println!("{:>5} {:>12.6} {:>12.6}", 4 * k, mean(flow.agent_losses(state)), mean(flow.agent_losses(&theta)));
        }
    }
    Ok(())
}
