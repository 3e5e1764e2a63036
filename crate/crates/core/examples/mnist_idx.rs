//! Loads MNIST digits 0 and 1 from IDX files and trains on IID shards.
//!
//! `cargo run --release --example mnist_idx -- <images.idx> <labels.idx>`
//!
//! Without arguments a small IDX pair of synthetic strokes is written to the
//! temp directory and used instead.

use std::path::{Path, PathBuf};

use peerflow::data::{load_mnist_idx, split_iid, write_idx_images, write_idx_labels};
use peerflow::distopt::{run_training, sync_init, Algorithm};
use peerflow::mixing::{build_topology, metropolis_hastings, Topology};
use peerflow::model::{Activation, ModelSpec};
use rand::{Rng, SeedableRng};

/// Vertical bar for a one, ring for a zero, with pixel noise.
fn fake_digits(dir: &Path, n: usize) -> peerflow::Result<(PathBuf, PathBuf)> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let side = 28;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = (i % 2) as u8;
        let img = (0..side * side)
            .map(|p| {
                let (r, c) = ((p / side) as f64 - 13.5, (p % side) as f64 - 13.5);
                let on = if digit == 1 { c.abs() < 2.0 && r.abs() < 10.0 } else { ((r * r + c * c).sqrt() - 8.0).abs() < 2.0 };
                let base = if on { 220.0 } else { 10.0 };
                (base + rng.random_range(-10.0..10.0_f64)).clamp(0.0, 255.0) as u8
            })
            .collect();
        images.push(img);
        labels.push(digit);
    }
    let (img_path, lbl_path) = (dir.join("fake-images.idx"), dir.join("fake-labels.idx"));
    write_idx_images(&img_path, side, side, &images)?;
    write_idx_labels(&lbl_path, &labels)?;
    Ok((img_path, lbl_path))
}

fn main() -> peerflow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (images, labels) = match args.as_slice() {
        [i, l] => (PathBuf::from(i), PathBuf::from(l)),
        _ => {
            let dir = std::env::temp_dir().join("peerflow-mnist-example");
            std::fs::create_dir_all(&dir)?;
            println!("no IDX paths given; using synthetic digits in {}", dir.display());
            fake_digits(&dir, 400)?
        }
    };

    let source = load_mnist_idx(&images, &labels, &[0, 1])?;
    let ones = source.targets.iter().filter(|t| t[0] == 1.0).count();
    println!("{} images of 0/1 ({ones} ones), {} pixels each", source.len(), source.input_dim());

    let agents = 4;
    let data = split_iid(&source, agents, 50, 1)?;
    let spec = ModelSpec::ntk_mlp_uniform(source.input_dim(), &[64], 1, Activation::Sigmoid, 1.0, 0.1)?;
    let w = metropolis_hastings(&build_topology(&Topology::Complete, agents)?);
    let rec = run_training(Algorithm::Atc, 100, 0.1, &sync_init(&spec, 2, agents), &spec, &data, &w, false)?;
    let g = rec.global_losses();
    println!("ATC, 100 steps: global loss {:.4} -> {:.4}", g[0], g[100]);
    Ok(())
}
