//! Oracles and generators shared by the integration tests.

#![allow(dead_code)]

use faer::Mat;
use peerflow::mixing::CommGraph;
use peerflow::model::{self, ModelSpec, ParamVector};
use rand::seq::SliceRandom;
use rand::Rng;

/// Random spanning tree plus each remaining edge with probability `p`.
pub fn random_connected_graph<R: Rng>(q: usize, p: f64, rng: &mut R) -> CommGraph {
    let mut order: Vec<usize> = (0..q).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for i in 1..q {
        let parent = order[rng.random_range(0..i)];
        edges.push((parent.min(order[i]), parent.max(order[i])));
    }
    for a in 0..q {
        for b in a + 1..q {
            if !edges.contains(&(a, b)) && rng.random::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    CommGraph::from_edges(q, &edges).unwrap()
}

/// Symmetric doubly stochastic matrix: a convex mix of `(Π + Πᵀ)/2` over
/// random permutations `Π`, plus a share of the identity.
pub fn random_symmetric_doubly_stochastic<R: Rng>(q: usize, rng: &mut R) -> Mat<f64> {
    let mut w = Mat::<f64>::zeros(q, q);
    let terms = 3;
    let weights: Vec<f64> = (0..=terms).map(|_| rng.random::<f64>() + 0.05).collect();
    let total: f64 = weights.iter().sum();
    for i in 0..q {
        w[(i, i)] += weights[terms] / total;
    }
    for &c in &weights[..terms] {
        let mut perm: Vec<usize> = (0..q).collect();
        perm.shuffle(rng);
        for (i, &j) in perm.iter().enumerate() {
            w[(i, j)] += 0.5 * c / total;
            w[(j, i)] += 0.5 * c / total;
        }
    }
    w
}

/// Central finite-difference Jacobian built only from forward passes.
pub fn fd_jacobian(spec: &ModelSpec, params: &ParamVector, xs: &[Vec<f64>], h: f64) -> Mat<f64> {
    let m = spec.output_dim();
    let p = params.len();
    let mut jac = Mat::<f64>::zeros(xs.len() * m, p);
    for j in 0..p {
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus.0[j] += h;
        minus.0[j] -= h;
        for (i, x) in xs.iter().enumerate() {
            let fp = model::forward(spec, &plus, x).unwrap();
            let fm = model::forward(spec, &minus, x).unwrap();
            for k in 0..m {
                jac[(i * m + k, j)] = (fp[k] - fm[k]) / (2.0 * h);
            }
        }
    }
    jac
}

/// `max |a - b| / max |a|`.
pub fn max_relative_error(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    let mut diff = 0.0_f64;
    let mut scale = 0.0_f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            diff = diff.max((a[(i, j)] - b[(i, j)]).abs());
            scale = scale.max(a[(i, j)].abs());
        }
    }
    diff / scale.max(f64::MIN_POSITIVE)
}

pub fn random_matrix<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Mat<f64> {
    Mat::from_fn(rows, cols, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

pub fn matvec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum()).collect()
}

pub fn rel_vec_error(reference: &[f64], other: &[f64]) -> f64 {
    let num: f64 = reference.iter().zip(other).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = reference.iter().map(|a| a * a).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}
