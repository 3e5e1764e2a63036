//! Parameter Jacobian and empirical NTK of an NTK-parameterized MLP, and how
//! the kernel drifts less during training as the width grows.

use peerflow::data::half_moons;
use peerflow::distopt::ntk_drift;
use peerflow::model::{empirical_ntk, forward, init_params, jacobian, Activation, ModelSpec};

fn main() -> peerflow::Result<()> {
    let spec = ModelSpec::ntk_mlp_uniform(2, &[32], 1, Activation::Sigmoid, 1.0, 0.1)?;
    let params = init_params(&spec, 0);
    let data = half_moons(6, 0.1, 0)?;

    let j = jacobian(&spec, &params, &data.inputs)?;
    println!("model has {} parameters; jacobian is {}x{}", spec.num_params(), j.nrows(), j.ncols());

    // spot check one column against a central difference
    let (col, h) = (5, 1e-6);
    let mut plus = params.clone();
    let mut minus = params.clone();
    plus.0[col] += h;
    minus.0[col] -= h;
    let x = &data.inputs[0];
    let fd = (forward(&spec, &plus, x)?[0] - forward(&spec, &minus, x)?[0]) / (2.0 * h);
    println!("dF/dθ[{col}] analytic {:.8e}, finite difference {:.8e}", j[(0, col)], fd);

    let k = empirical_ntk(&spec, &params, &data.inputs, &data.inputs)?;
    println!("\nempirical NTK on 6 points:");
    for i in 0..k.nrows() {
        let row: Vec<String> = (0..k.ncols()).map(|c| format!("{:7.3}", k[(i, c)])).collect();
        println!("  {}", row.join(" "));
    }

    println!("\nrelative kernel drift after 100 steps (η = 1):");
    let train = half_moons(40, 0.1, 1)?;
    for width in [16, 64, 256] {
        let spec = ModelSpec::ntk_mlp_uniform(2, &[width], 1, Activation::Sigmoid, 1.0, 0.1)?;
        let drift = ntk_drift(&spec, &init_params(&spec, 2), &train, 1.0, 100)?;
        println!("  width {width:>4}: {drift:.4e}");
    }
    Ok(())
}
