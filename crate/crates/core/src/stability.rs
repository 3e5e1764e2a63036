//! BIBO stability audit of the linearized DGD flow, with the same spectral
//! diagnostics reported (informationally) for ATC and CTA.
//!
//! The DGD state matrix `𝒲̂ - (η/DQ)Ψ₀` is negative semidefinite for symmetric
//! doubly stochastic `W`. It is strictly stable exactly when no consensus
//! direction `1_Q ⊗ z` is invisible to every agent's data, which the
//! minimality value measures through the columns of the Jacobian blocks.

use std::fmt;

use faer::{Mat, MatRef};

use crate::distopt::Algorithm;
use crate::error::{check_len, Error, Result};
use crate::flow::{build_system, data_subspace_basis, LinearizationAnchor};
use crate::mixing::symmetric_eigenvalues;

/// Thresholds used by [`bibo_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityTolerances {
    /// Allowed row/column sum deviation from 1.
    pub stochastic: f64,
    /// Most negative entry still treated as nonnegative.
    pub negative_entry: f64,
    /// Minimality values at or below this count as zero.
    pub minimality: f64,
    /// Abscissa below `-strict` is stable.
    pub strict: f64,
    /// Abscissa in `[-strict, marginal]` is marginal.
    pub marginal: f64,
}

impl Default for StabilityTolerances {
    fn default() -> Self {
        StabilityTolerances {
            stochastic: 1e-10,
            negative_entry: 1e-12,
            minimality: 1e-10,
            strict: 1e-12,
            marginal: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoublyStochasticCheck {
    pub max_row_deviation: f64,
    pub max_col_deviation: f64,
    pub min_entry: f64,
    pub passed: bool,
}

/// Row and column sums of `w` against 1, and its smallest entry.
pub fn check_doubly_stochastic(w: MatRef<'_, f64>, tol: &StabilityTolerances) -> Result<DoublyStochasticCheck> {
    check_len("mixing matrix columns", w.nrows(), w.ncols())?;
    let n = w.nrows();
    let mut max_row_deviation = 0.0_f64;
    let mut max_col_deviation = 0.0_f64;
    let mut min_entry = f64::INFINITY;
    for i in 0..n {
        let row: f64 = (0..n).map(|j| w[(i, j)]).sum();
        let col: f64 = (0..n).map(|j| w[(j, i)]).sum();
        max_row_deviation = max_row_deviation.max((row - 1.0).abs());
        max_col_deviation = max_col_deviation.max((col - 1.0).abs());
        for j in 0..n {
            min_entry = min_entry.min(w[(i, j)]);
        }
    }
    let passed = max_row_deviation < tol.stochastic
        && max_col_deviation < tol.stochastic
        && min_entry >= -tol.negative_entry;
    Ok(DoublyStochasticCheck {
        max_row_deviation,
        max_col_deviation,
        min_entry,
        passed,
    })
}

/// `min_j max_q ‖J_q[:, j]‖`. A zero value marks a parameter coordinate that
/// no agent's output depends on, i.e. a zero column of `Ψ₀(1_Q ⊗ I_P)`.
pub fn minimality_check(anchor: &LinearizationAnchor) -> f64 {
    (0..anchor.block_dim())
        .map(|j| {
            (0..anchor.num_agents())
                .map(|q| {
                    let col = anchor.jacobian(q).col(j);
                    (0..col.nrows()).map(|i| col[i] * col[i]).sum::<f64>().sqrt()
                })
                .fold(0.0, f64::max)
        })
        .fold(f64::INFINITY, f64::min)
}

fn is_symmetric(a: MatRef<'_, f64>) -> bool {
    a.nrows() == a.ncols() && (0..a.nrows()).all(|i| (0..i).all(|j| a[(i, j)] == a[(j, i)]))
}

/// All eigenvalues as `(re, im)` pairs.
pub fn eigenvalues(a: MatRef<'_, f64>, symmetric: bool) -> Result<Vec<(f64, f64)>> {
    check_len("square matrix", a.nrows(), a.ncols())?;
    if symmetric {
        Ok(symmetric_eigenvalues(a)?.into_iter().map(|l| (l, 0.0)).collect())
    } else {
        Ok(a.eigenvalues()
            .map_err(|e| Error::Eigen(format!("{e:?}")))?
            .into_iter()
            .map(|c| (c.re, c.im))
            .collect())
    }
}

/// Largest real part over the eigenvalues of `a`. `symmetric` selects the
/// self-adjoint solver, which only reads the lower triangle.
pub fn spectral_abscissa(a: MatRef<'_, f64>, symmetric: bool) -> Result<f64> {
    Ok(eigenvalues(a, symmetric)?
        .into_iter()
        .map(|(re, _)| re)
        .fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Stable,
    Marginal,
    ViolatedPrecondition,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "stable",
            Verdict::Marginal => "marginal",
            Verdict::ViolatedPrecondition => "violated-precondition",
        })
    }
}

impl Verdict {
    pub fn decide(stochastic: bool, minimality: f64, abscissa: f64, tol: &StabilityTolerances) -> Verdict {
        if !stochastic {
            Verdict::ViolatedPrecondition
        } else if minimality > tol.minimality && abscissa < -tol.strict {
            Verdict::Stable
        } else if (-tol.strict..=tol.marginal).contains(&abscissa) {
            Verdict::Marginal
        } else {
            Verdict::ViolatedPrecondition
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub algorithm: Algorithm,
    pub step_size: f64,
    pub state_dim: usize,
    /// Dimension of the dense eigenproblem actually solved.
    pub solved_dim: usize,
    pub spectral_abscissa: f64,
    pub doubly_stochastic: DoublyStochasticCheck,
    pub minimality: f64,
    pub verdict: Verdict,
    /// Only the DGD verdict is backed by the stability result; the others
    /// are reported for reference.
    pub informational: bool,
    pub tolerances: StabilityTolerances,
}

impl StabilityReport {
    /// Flat `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let ds = &self.doubly_stochastic;
        let t = &self.tolerances;
        let lines = [
            ("algorithm", self.algorithm.to_string()),
            ("verdict", self.verdict.to_string()),
            ("informational", self.informational.to_string()),
            ("step_size", self.step_size.to_string()),
            ("state_dim", self.state_dim.to_string()),
            ("solved_dim", self.solved_dim.to_string()),
            ("spectral_abscissa", self.spectral_abscissa.to_string()),
            ("minimality", self.minimality.to_string()),
            ("doubly_stochastic", ds.passed.to_string()),
            ("max_row_deviation", ds.max_row_deviation.to_string()),
            ("max_col_deviation", ds.max_col_deviation.to_string()),
            ("min_entry", ds.min_entry.to_string()),
            ("tol_stochastic", t.stochastic.to_string()),
            ("tol_negative_entry", t.negative_entry.to_string()),
            ("tol_minimality", t.minimality.to_string()),
            ("tol_strict", t.strict.to_string()),
            ("tol_marginal", t.marginal.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// Spectral abscissa of the state matrix, solved in the data subspace when
/// `Q·M·D < P`: there the spectrum is that of the reduced system plus the
/// eigenvalues of `W - I`, each repeated `P - r` times.
fn state_abscissa(
    algorithm: Algorithm,
    weights: MatRef<'_, f64>,
    anchor: &LinearizationAnchor,
    step_size: f64,
    dense_cap: usize,
) -> Result<(f64, usize)> {
    let symmetric = algorithm == Algorithm::Dgd && is_symmetric(weights);
    match data_subspace_basis(anchor) {
        Some(basis) => {
            let reduced = build_system(algorithm, &anchor.project(basis.as_ref())?, weights, step_size)?;
            let a = reduced.state_matrix(dense_cap)?;
            let inner = spectral_abscissa(a.as_ref(), symmetric)?;
            let q = weights.nrows();
            let shift = Mat::from_fn(q, q, |i, j| weights[(i, j)] - if i == j { 1.0 } else { 0.0 });
            let outer = spectral_abscissa(shift.as_ref(), is_symmetric(weights))?;
            Ok((inner.max(outer), reduced.dim()))
        }
        None => {
            let sys = build_system(algorithm, anchor, weights, step_size)?;
            let a = sys.state_matrix(dense_cap)?;
            Ok((spectral_abscissa(a.as_ref(), symmetric)?, sys.dim()))
        }
    }
}

/// Doubly stochastic check, minimality value and spectral abscissa of the
/// linearized `algorithm` flow, combined into a verdict.
pub fn bibo_report(
    algorithm: Algorithm,
    weights: MatRef<'_, f64>,
    anchor: &LinearizationAnchor,
    step_size: f64,
    tolerances: &StabilityTolerances,
    dense_cap: usize,
) -> Result<StabilityReport> {
    let doubly_stochastic = check_doubly_stochastic(weights, tolerances)?;
    let minimality = minimality_check(anchor);
    let (abscissa, solved_dim) = state_abscissa(algorithm, weights, anchor, step_size, dense_cap)?;
    Ok(StabilityReport {
        algorithm,
        step_size,
        state_dim: anchor.state_dim(),
        solved_dim,
        spectral_abscissa: abscissa,
        doubly_stochastic,
        minimality,
        verdict: Verdict::decide(doubly_stochastic.passed, minimality, abscissa, tolerances),
        informational: algorithm != Algorithm::Dgd,
        tolerances: *tolerances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gaussian_blobs, split_iid, AgentData, LabeledDataset};
    use crate::distopt::sync_init;
    use crate::flow::{build_anchor, DEFAULT_DENSE_CAP};
    use crate::mixing::{build_topology, metropolis_hastings, MixingMatrix, Topology};
    use crate::model::ModelSpec;

    fn tol() -> StabilityTolerances {
        StabilityTolerances::default()
    }

    #[test]
    fn doubly_stochastic_examples() {
        let w = metropolis_hastings(&build_topology(&Topology::Star, 5).unwrap());
        assert!(check_doubly_stochastic(w.as_mat(), &tol()).unwrap().passed);
        assert!(check_doubly_stochastic(MixingMatrix::identity(3).as_mat(), &tol()).unwrap().passed);
        let bad = Mat::from_fn(2, 2, |i, j| [[0.9, 0.2], [0.1, 0.8]][i][j]);
        let c = check_doubly_stochastic(bad.as_ref(), &tol()).unwrap();
        assert!(!c.passed);
        assert!((c.max_row_deviation - 0.1).abs() < 1e-15);
        assert!(c.max_col_deviation < 1e-15);
    }

    #[test]
    fn abscissa_of_minus_identity() {
        let a = Mat::from_fn(4, 4, |i, j| if i == j { -1.0 } else { 0.0 });
        assert_eq!(spectral_abscissa(a.as_ref(), true).unwrap(), -1.0);
        assert!((spectral_abscissa(a.as_ref(), false).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pure_consensus_has_zero_abscissa() {
        let w = metropolis_hastings(&build_topology(&Topology::Complete, 4).unwrap());
        let shift = w.lift_shifted(3).materialize();
        let eig = eigenvalues(shift.as_ref(), true).unwrap();
        let zeros = eig.iter().filter(|(re, _)| re.abs() < 1e-12).count();
        assert_eq!(zeros, 3);
        assert!(spectral_abscissa(shift.as_ref(), true).unwrap().abs() < 1e-12);
    }

    fn affine_anchor(inputs: Vec<Vec<f64>>, q: usize) -> LinearizationAnchor {
        let n = inputs[0].len();
        let d = inputs.len() / q;
        let targets = (0..inputs.len()).map(|i| vec![(i % 2) as f64]).collect();
        let src = LabeledDataset::new(inputs, targets).unwrap();
        let agents = (0..q)
            .map(|a| src.subset(&(a * d..(a + 1) * d).collect::<Vec<_>>()))
            .collect();
        let data = AgentData::new(agents).unwrap();
        let spec = ModelSpec::affine(n).unwrap();
        build_anchor(&spec, &sync_init(&spec, 0, q), &data).unwrap()
    }

    #[test]
    fn dead_coordinate_gives_zero_minimality() {
        let inputs: Vec<Vec<f64>> = (0..8).map(|i| vec![(i as f64 * 0.7).sin(), 0.0, (i as f64).cos()]).collect();
        let anchor = affine_anchor(inputs, 2);
        assert_eq!(minimality_check(&anchor), 0.0);
        let w = metropolis_hastings(&build_topology(&Topology::Complete, 2).unwrap());
        let r = bibo_report(Algorithm::Dgd, w.as_mat(), &anchor, 1e-2, &tol(), DEFAULT_DENSE_CAP).unwrap();
        assert_ne!(r.verdict, Verdict::Stable);
    }

    #[test]
    fn bias_column_bounds_minimality() {
        // every bias Jacobian entry is 1, so that column has norm √D
        let inputs: Vec<Vec<f64>> = (0..6).map(|i| vec![1.0 + i as f64, (i * i) as f64]).collect();
        let anchor = affine_anchor(inputs, 2);
        let m = minimality_check(&anchor);
        assert!(m > 0.0 && m <= 3f64.sqrt() + 1e-15);
    }

    #[test]
    fn full_rank_affine_is_stable() {
        let src = gaussian_blobs(24, 3, 0.5, 9).unwrap();
        let data = split_iid(&src, 3, 8, 1).unwrap();
        let spec = ModelSpec::affine(3).unwrap();
        let anchor = build_anchor(&spec, &sync_init(&spec, 2, 3), &data).unwrap();
        let w = metropolis_hastings(&build_topology(&Topology::Cycle, 3).unwrap());
        let r = bibo_report(Algorithm::Dgd, w.as_mat(), &anchor, 0.5, &tol(), DEFAULT_DENSE_CAP).unwrap();
        assert_eq!(r.verdict, Verdict::Stable, "{}", r.to_key_values());
        assert!(!r.informational);
        let text = r.to_key_values();
        assert!(text.starts_with("algorithm=dgd\nverdict=stable\n"));
    }

    #[test]
    fn reduced_spectrum_matches_full() {
        // P = 9 > QD = 4: the reduced path must reproduce the full abscissa
        let src = gaussian_blobs(4, 8, 0.4, 2).unwrap();
        let data = split_iid(&src, 2, 2, 3).unwrap();
        let spec = ModelSpec::affine(8).unwrap();
        let anchor = build_anchor(&spec, &sync_init(&spec, 2, 2), &data).unwrap();
        let w = Mat::from_fn(2, 2, |i, j| if i == j { 0.7 } else { 0.3 });
        for alg in Algorithm::ALL {
            let (red, dim) = state_abscissa(alg, w.as_ref(), &anchor, 2.0, DEFAULT_DENSE_CAP).unwrap();
            assert_eq!(dim, 8);
            let full = build_system(alg, &anchor, w.as_ref(), 2.0).unwrap().state_matrix(100).unwrap();
            let f = spectral_abscissa(full.as_ref(), false).unwrap();
            assert!((red - f).abs() < 1e-12, "{alg}: {red} vs {f}");
        }
    }

    #[test]
    fn non_stochastic_weights_violate() {
        let src = gaussian_blobs(4, 2, 0.4, 2).unwrap();
        let data = split_iid(&src, 2, 2, 3).unwrap();
        let spec = ModelSpec::affine(2).unwrap();
        let anchor = build_anchor(&spec, &sync_init(&spec, 2, 2), &data).unwrap();
        let w = Mat::from_fn(2, 2, |i, j| [[0.9, 0.2], [0.1, 0.8]][i][j]);
        let r = bibo_report(Algorithm::Dgd, w.as_ref(), &anchor, 0.1, &tol(), DEFAULT_DENSE_CAP).unwrap();
        assert_eq!(r.verdict, Verdict::ViolatedPrecondition);
    }

    #[test]
    fn verdict_rule() {
        let t = tol();
        assert_eq!(Verdict::decide(true, 1.0, -1e-3, &t), Verdict::Stable);
        assert_eq!(Verdict::decide(true, 0.0, 0.0, &t), Verdict::Marginal);
        assert_eq!(Verdict::decide(true, 1.0, 1e-3, &t), Verdict::ViolatedPrecondition);
        assert_eq!(Verdict::decide(false, 1.0, -1.0, &t), Verdict::ViolatedPrecondition);
    }
}
