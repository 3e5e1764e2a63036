//! `peerflow simulate|predict|compare|stability --config <path> --out <dir>`
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error. Runtime errors are
//! printed as one line: `peerflow: error[<kind>]: <message>`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use peerflow::experiment::{self, ExperimentConfig, DataSource};
use peerflow::Error;

#[derive(Parser)]
#[command(name = "peerflow", version, about = "Simulate decentralized training and predict it with linearized gradient flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.dir`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override for data, split and initialization
    #[arg(long)]
    seed: Option<u64>,
    /// Use the Gaussian-blob stand-in instead of MNIST files
    #[arg(long)]
    synthetic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the distributed training and write observed.csv
    Simulate(Common),
    /// Solve the linearized flow and write predicted.csv
    Predict(Common),
    /// Compare observed and predicted losses; writes compare.txt and plot.svg
    Compare(Common),
    /// Stability audit of the linearized flow; writes stability.txt
    Stability(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::from_path(&common.config)?;
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.data.seed = seed;
    }
    if common.synthetic && cfg.data.source == DataSource::Mnist {
        cfg.data.source = DataSource::Synthetic;
        cfg.data.mnist_images = None;
        cfg.data.mnist_labels = None;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = load(&c)?;
            let rec = experiment::simulate(&cfg)?;
            let g = rec.global_losses();
            println!(
                "simulated {} steps of {}: global loss {:.6e} -> {:.6e}",
                rec.num_steps(),
                rec.algorithm,
                g[0],
                g[g.len() - 1]
            );
        }
        Command::Predict(c) => {
            let cfg = load(&c)?;
            let p = experiment::predict(&cfg)?;
            println!("predicted {} steps with the {} solver", p.losses.model.len() - 1, p.solver);
        }
        Command::Compare(c) => {
            let cfg = load(&c)?;
            let r = experiment::compare(&cfg)?;
            println!(
                "max relative loss error: model {:.3e}, linearized {:.3e}",
                r.model.max, r.linearized.max
            );
        }
        Command::Stability(c) => {
            let cfg = load(&c)?;
            let r = experiment::stability(&cfg)?;
            print!("{}", r.to_key_values());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("peerflow: error[{}]: {msg}", e.kind());
            ExitCode::from(2)
        }
    }
}
