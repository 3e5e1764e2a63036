//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! The full-size neural tracking run (width 256, D = 200, three topologies)
//! takes several minutes per topology and needs about 4 GB; it only runs
//! with `cargo test --test acceptance -- --ignored` or with
//! `PEERFLOW_FULL_ACCEPTANCE=1`.

mod common;

use std::path::Path;
use std::time::Instant;

use faer::Mat;
use peerflow::data::{gaussian_blobs, half_moons, split_iid, LabeledDataset};
use peerflow::distopt::{
    local_gradient, local_mse_loss, ntk_drift, run_training, sync_init, Algorithm, StackedParams,
};
use peerflow::experiment::{compare_losses, predict_problem, ExperimentConfig, Problem};
use peerflow::flow::{
    build_anchor, build_system, integrate_rk4, solve_affine_closed_form, solve_closed_form, ClosedFormOptions,
    FnField, LinearizationAnchor, DEFAULT_DENSE_CAP,
};
use peerflow::mixing::{build_topology, metropolis_hastings, spectral_gap, MixingMatrix, Topology};
use peerflow::model::{init_params, jacobian, Activation, ModelSpec};
use peerflow::stability::{bibo_report, minimality_check, spectral_abscissa, StabilityTolerances, Verdict};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text, Path::new("acceptance.toml")).unwrap()
}

/// Simulated vs predicted per-agent losses; returns the max relative error
/// of the model-substitution and linearized-output predictions.
fn tracking_error(cfg: &ExperimentConfig) -> (f64, f64) {
    let problem = Problem::from_config(cfg).unwrap();
    let t = &cfg.training;
    let observed = run_training(
        t.algorithm,
        t.steps,
        t.step_size,
        &problem.theta0,
        &problem.spec,
        &problem.data,
        &problem.weights,
        false,
    )
    .unwrap();
    let predicted = predict_problem(&problem, cfg).unwrap();
    let model = compare_losses(&observed.losses, &predicted.losses.model).unwrap();
    let lin = compare_losses(&observed.losses, &predicted.losses.linearized).unwrap();
    (model.max, lin.max)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cfg = config(
        "[model]\nkind = \"affine\"\n\
         [data]\nsource = \"synthetic\"\nsynthetic_dim = 784\nagents = 8\nsamples_per_agent = 50\n\
         [training]\ntopology = \"complete\"\nalgorithm = \"dgd\"\nstep_size = 1e-4\nsteps = 200\n\
         [prediction]\nsolver = \"closed-form\"\n",
    );
    let (model, lin) = tracking_error(&cfg);
    let secs = start.elapsed().as_secs_f64();
    check(
        model <= 1e-2 && lin <= 1e-2 && secs <= 60.0,
        format!("max rel loss error {model:.3e} (linearized {lin:.3e}), {secs:.1}s"),
    )
}

fn neural_tracking(width: usize, d: usize, limit_secs: f64) -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for topo in ["cycle", "star", "complete"] {
        let start = Instant::now();
        let cfg = config(&format!(
            "[model]\nkind = \"ntk-mlp\"\nhidden_widths = [{width}]\nhidden_activation = \"sigmoid\"\ns_w = 1.0\ns_b = 0.1\n\
             [data]\nsource = \"half-moons\"\nagents = 8\nsamples_per_agent = {d}\n\
             [training]\ntopology = \"{topo}\"\nalgorithm = \"dgd\"\nstep_size = 1e-4\nsteps = 200\n\
             [prediction]\nsolver = \"closed-form\"\n"
        ));
        let (model, lin) = tracking_error(&cfg);
        let secs = start.elapsed().as_secs_f64();
        ok &= model <= 5e-2 && lin <= 5e-2 && secs <= limit_secs;
        details.push(format!("{topo}: {model:.3e}/{lin:.3e} in {secs:.1}s"));
    }
    check(ok, format!("max rel loss error model/linearized: {}", details.join(", ")))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let times = [0.25, 0.5, 1.0, 2.0, 4.0];
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let n = rng.random_range(2..=50);
        let m = random_matrix(n, n, 2.0 / (n as f64).sqrt(), &mut rng);
        let alpha = spectral_abscissa(m.as_ref(), false).unwrap();
        let shift = alpha + rng.random::<f64>();
        let a = Mat::from_fn(n, n, |i, j| m[(i, j)] - if i == j { shift } else { 0.0 });
        let u: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let x0: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let exact = solve_affine_closed_form(a.as_ref(), &u, &x0, &times).unwrap();
        let field = FnField::new(n, |x: &[f64], out: &mut [f64]| {
            for (o, (ax, ui)) in out.iter_mut().zip(matvec(&a, x).into_iter().zip(&u)) {
                *o = ax + ui;
            }
        });
        let rk = integrate_rk4(&field, &x0, &times, 1e-3).unwrap();
        for (e, r) in exact.iter().zip(&rk) {
            worst = worst.max(rel_vec_error(e, r));
        }
    }
    check(worst <= 1e-8, format!("worst relative trajectory error {worst:.3e} over 20 systems"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0_f64;
    for case in 0..20 {
        let depth = rng.random_range(1..=3);
        let mut widths = vec![rng.random_range(1..=16)];
        for _ in 0..depth {
            widths.push(rng.random_range(1..=16));
        }
        let mut acts: Vec<Activation> = (0..depth - 1)
            .map(|_| if rng.random::<bool>() { Activation::Sigmoid } else { Activation::Identity })
            .collect();
        acts.push(Activation::Identity);
        let spec = if case % 5 == 0 {
            ModelSpec::affine(widths[0]).unwrap()
        } else {
            ModelSpec::ntk_mlp(widths.clone(), acts, rng.random_range(0.5..2.0), rng.random_range(0.0..1.0)).unwrap()
        };
        let params = init_params(&spec, case);
        let xs: Vec<Vec<f64>> = (0..rng.random_range(1..=4))
            .map(|_| (0..spec.input_dim()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let analytic = jacobian(&spec, &params, &xs).unwrap();
        let fd = fd_jacobian(&spec, &params, &xs, 1e-5);
        worst = worst.max(max_relative_error(&analytic, &fd));
    }
    check(worst <= 1e-5, format!("worst max-norm relative error {worst:.3e} over 20 models"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0_f64;
    let mut symmetric = true;
    let mut count = 0;
    for q in [2usize, 3, 4, 5, 8, 13, 21, 32] {
        let mut graphs = vec![
            build_topology(&Topology::Cycle, q).unwrap(),
            build_topology(&Topology::Star, q).unwrap(),
            build_topology(&Topology::Complete, q).unwrap(),
        ];
        for _ in 0..3 {
            graphs.push(random_connected_graph(q, 0.2, &mut rng));
        }
        for g in &graphs {
            let w = metropolis_hastings(g);
            count += 1;
            for i in 0..q {
                let row: f64 = (0..q).map(|j| w.get(i, j)).sum();
                let col: f64 = (0..q).map(|j| w.get(j, i)).sum();
                worst = worst.max((row - 1.0).abs()).max((col - 1.0).abs());
                symmetric &= (0..q).all(|j| w.get(i, j) == w.get(j, i));
            }
        }
    }
    let complete = metropolis_hastings(&build_topology(&Topology::Complete, 8).unwrap());
    let eighth = (0..8).all(|i| (0..8).all(|j| (complete.get(i, j) - 0.125).abs() <= 1e-15));
    check(
        symmetric && worst <= 1e-12 && eighth,
        format!("{count} matrices, symmetric={symmetric}, worst sum deviation {worst:.2e}, complete Q=8 all 1/8: {eighth}"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (p, rows) = (3, 2);
    let mut worst = 0.0_f64;
    for (topo, q) in [(Topology::Cycle, 6), (Topology::Star, 5), (Topology::Complete, 4)] {
        let w = metropolis_hastings(&build_topology(&topo, q).unwrap());
        let theta0: Vec<f64> = (0..q * p).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let anchor = LinearizationAnchor::new(
            vec![Mat::zeros(rows, p); q],
            vec![0.0; q * rows],
            vec![0.0; q * rows],
            theta0.clone(),
            rows,
        )
        .unwrap();
        let mean = StackedParams::new(q, p, theta0).unwrap().agent_mean();
        let t = 50.0 / spectral_gap(&w).unwrap();
        for alg in Algorithm::ALL {
            let sys = build_system(alg, &anchor, w.as_mat(), 1.0).unwrap();
            let out = solve_closed_form(&sys, &[t], &ClosedFormOptions::default()).unwrap();
            for (i, v) in out[0].iter().enumerate() {
                worst = worst.max((v - mean[i % p]).abs());
            }
        }
    }
    check(worst <= 1e-6, format!("max distance to initial average {worst:.3e}"))
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let tol = StabilityTolerances::default();
    // the affine configuration: complete graph, Q = 8, D = 200, N = 784
    let cfg = config(
        "[model]\nkind = \"affine\"\n\
         [data]\nsource = \"synthetic\"\nsynthetic_dim = 784\nagents = 8\nsamples_per_agent = 200\n\
         [training]\ntopology = \"complete\"\nalgorithm = \"dgd\"\nstep_size = 1e-4\n",
    );
    let problem = Problem::from_config(&cfg).unwrap();
    let anchor = problem.anchor().unwrap();
    let reference = bibo_report(Algorithm::Dgd, problem.weights.as_mat(), &anchor, 1e-4, &tol, DEFAULT_DENSE_CAP).unwrap();
    let reference_secs = start.elapsed().as_secs_f64();

    // engineered dataset: input coordinate 0 is zero everywhere
    let src = gaussian_blobs(40, 12, 0.3, 7).unwrap();
    let inputs = src.inputs.iter().map(|x| {
        let mut x = x.clone();
        x[0] = 0.0;
        x
    });
    let dead = LabeledDataset::new(inputs.collect(), src.targets.clone()).unwrap();
    let data = split_iid(&dead, 4, 10, 1).unwrap();
    let spec = ModelSpec::affine(12).unwrap();
    let dead_anchor = build_anchor(&spec, &sync_init(&spec, 2, 4), &data).unwrap();
    let w4 = metropolis_hastings(&build_topology(&Topology::Complete, 4).unwrap());
    let dead_report = bibo_report(Algorithm::Dgd, w4.as_mat(), &dead_anchor, 1e-4, &tol, DEFAULT_DENSE_CAP).unwrap();

    // random symmetric doubly stochastic instances
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..20 {
        let q = rng.random_range(2..=6);
        let p = rng.random_range(2..=200 / q);
        let w = if i % 2 == 0 {
            metropolis_hastings(&random_connected_graph(q, 0.4, &mut rng)).into_mat()
        } else {
            random_symmetric_doubly_stochastic(q, &mut rng)
        };
        let rows = rng.random_range(1..=p);
        let anchor = random_anchor(q, p, rows, &mut rng);
        let a = build_system(Algorithm::Dgd, &anchor, w.as_ref(), rng.random_range(0.01..5.0))
            .unwrap()
            .state_matrix(DEFAULT_DENSE_CAP)
            .unwrap();
        worst = worst.max(spectral_abscissa(a.as_ref(), true).unwrap());
    }

    let ok = reference.verdict == Verdict::Stable
        && dead_report.minimality == 0.0
        && minimality_check(&dead_anchor) == 0.0
        && dead_report.verdict != Verdict::Stable
        && worst <= 1e-10;
    check(
        ok,
        format!(
            "affine config: {} (abscissa {:.3e}, minimality {:.3e}, dim {}, {:.1}s); dead coordinate: minimality {}, {}; random abscissa max {:.3e}",
            reference.verdict,
            reference.spectral_abscissa,
            reference.minimality,
            reference.solved_dim,
            reference_secs,
            dead_report.minimality,
            dead_report.verdict,
            worst
        ),
    )
}

fn random_anchor<R: Rng>(q: usize, p: usize, rows: usize, rng: &mut R) -> LinearizationAnchor {
    let jac = (0..q).map(|_| random_matrix(rows, p, 1.0, rng)).collect();
    let vec = |n: usize, rng: &mut R| (0..n).map(|_| rng.random::<f64>()).collect::<Vec<_>>();
    let outputs = vec(q * rows, rng);
    let targets = vec(q * rows, rng);
    let theta = vec(q * p, rng);
    LinearizationAnchor::new(jac, outputs, targets, theta, rows).unwrap()
}

fn criterion_8() -> Outcome {
    let q = 3;
    let src = half_moons(q * 4, 0.1, 8).unwrap();
    let data = split_iid(&src, q, 4, 9).unwrap();
    let spec = ModelSpec::ntk_mlp_uniform(2, &[6], 1, Activation::Sigmoid, 1.0, 0.1).unwrap();
    let (eta, steps) = (0.3, 10);
    // different initial parameters per agent make the decoupling visible
    let theta0: Vec<f64> = (0..q).flat_map(|a| init_params(&spec, 100 + a as u64).0).collect();
    let theta0 = StackedParams::new(q, spec.num_params(), theta0).unwrap();
    let id = MixingMatrix::identity(q);

    // independent per-agent gradient descent with the same 1/(DQ) scaling
    let scale = 1.0 / (data.samples_per_agent() * q) as f64;
    let mut reference_params = vec![theta0.as_slice().to_vec()];
    let mut reference_losses = Vec::new();
    let mut blocks: Vec<Vec<f64>> = theta0.blocks().map(<[f64]>::to_vec).collect();
    for k in 0..=steps {
        reference_losses.push(
            blocks.iter().enumerate().map(|(a, b)| local_mse_loss(&spec, b, data.agent(a)).unwrap()).collect::<Vec<_>>(),
        );
        if k == steps {
            break;
        }
        for (a, b) in blocks.iter_mut().enumerate() {
            let g = local_gradient(&spec, b, data.agent(a), scale).unwrap();
            b.iter_mut().zip(&g).for_each(|(v, g)| *v -= eta * g);
        }
        reference_params.push(blocks.concat());
    }
    let mut bitwise = true;
    for alg in Algorithm::ALL {
        let rec = run_training(alg, steps, eta, &theta0, &spec, &data, &id, true).unwrap();
        bitwise &= rec.params.as_ref() == Some(&reference_params) && rec.losses == reference_losses;
    }

    let anchor = build_anchor(&spec, &sync_init(&spec, 1, q), &data).unwrap();
    let systems: Vec<_> = Algorithm::ALL
        .iter()
        .map(|&a| build_system(a, &anchor, id.as_mat(), eta).unwrap())
        .collect();
    let a0 = systems[0].state_matrix(DEFAULT_DENSE_CAP).unwrap();
    let mut diff = 0.0_f64;
    for s in &systems[1..] {
        let a = s.state_matrix(DEFAULT_DENSE_CAP).unwrap();
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                diff = diff.max((a[(i, j)] - a0[(i, j)]).abs());
            }
        }
        for (x, y) in s.forcing().iter().zip(systems[0].forcing()) {
            diff = diff.max((x - y).abs());
        }
    }
    check(
        bitwise && diff <= 1e-15,
        format!("trajectories bitwise equal to independent GD: {bitwise}; max |ΔA|, |Δu| = {diff:.1e}"),
    )
}

fn criterion_9() -> Outcome {
    let data = half_moons(40, 0.1, 9).unwrap();
    let (eta, steps) = (1.0, 200);
    let seeds = 0..5u64;
    let mean_drift = |width: usize| {
        let spec = ModelSpec::ntk_mlp_uniform(2, &[width], 1, Activation::Sigmoid, 1.0, 0.1).unwrap();
        seeds.clone().map(|s| ntk_drift(&spec, &init_params(&spec, s), &data, eta, steps).unwrap()).sum::<f64>()
            / seeds.clone().count() as f64
    };
    let (narrow, wide) = (mean_drift(16), mean_drift(256));
    let ratio = narrow / wide;
    check(
        ratio >= 2.0,
        format!("mean relative NTK drift: width 16 {narrow:.3e}, width 256 {wide:.3e}, ratio {ratio:.2}"),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let full = args.iter().any(|a| a == "--ignored" || a == "--include-ignored")
        || std::env::var_os("PEERFLOW_FULL_ACCEPTANCE").is_some();
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();

    type Criterion = (&'static str, &'static str, Box<dyn Fn() -> Outcome>);
    let mut criteria: Vec<Criterion> = vec![
        ("1", "affine exactness", Box::new(criterion_1)),
        ("2", "neural tracking, width 64, D=50", Box::new(|| neural_tracking(64, 50, 60.0))),
        ("3", "closed form vs rk4", Box::new(criterion_3)),
        ("4", "jacobian vs finite differences", Box::new(criterion_4)),
        ("5", "mixing matrix invariants", Box::new(criterion_5)),
        ("6", "consensus limit", Box::new(criterion_6)),
        ("7", "stability", Box::new(criterion_7)),
        ("8", "identity mixing degeneracies", Box::new(criterion_8)),
        ("9", "ntk drift shrinks with width", Box::new(criterion_9)),
    ];
    if full {
        criteria.push(("2-full", "neural tracking, width 256, D=200", Box::new(|| neural_tracking(256, 200, 900.0))));
    }

    let mut failed = 0;
    for (id, name, run) in &criteria {
        if !filters.is_empty() && !filters.iter().any(|f| id.contains(f.as_str()) || name.contains(f.as_str())) {
            continue;
        }
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {id} ({name}): PASS: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL: {detail}");
            }
        }
    }
    if !full {
        println!("criterion 2-full (neural tracking, width 256, D=200): SKIPPED (run with -- --ignored)");
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
