//! Communication graphs, Metropolis–Hastings mixing weights and the
//! Kronecker-lifted averaging operators `W ⊗ I_P` and `(W - I) ⊗ I_P`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use faer::{Mat, MatRef, Side};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Named topology, as written in configs: `cycle`, `star`, `complete` or
/// `custom:<path>` where the file lists one `q r` edge per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Topology {
    Cycle,
    Star,
    Complete,
    Custom(PathBuf),
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cycle" => Ok(Topology::Cycle),
            "star" => Ok(Topology::Star),
            "complete" => Ok(Topology::Complete),
            other => match other.strip_prefix("custom:") {
                Some(path) if !path.is_empty() => Ok(Topology::Custom(PathBuf::from(path))),
                _ => Err(Error::Topology(format!(
                    "unknown topology `{other}` (expected cycle, star, complete or custom:<path>)"
                ))),
            },
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::Cycle => f.write_str("cycle"),
            Topology::Star => f.write_str("star"),
            Topology::Complete => f.write_str("complete"),
            Topology::Custom(p) => write!(f, "custom:{}", p.display()),
        }
    }
}

impl TryFrom<String> for Topology {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Topology> for String {
    fn from(t: Topology) -> String {
        t.to_string()
    }
}

/// Undirected, connected, simple graph over agents `0..num_agents`.
/// Edges are stored normalized as `(min, max)`; self-loops are implicit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    num_agents: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl CommGraph {
    /// Builds a graph from an edge list, rejecting self-loops, duplicates,
    /// out-of-range indices and disconnected results.
    pub fn from_edges(num_agents: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if num_agents < 2 {
            return Err(Error::Topology(format!(
                "need at least 2 agents, got {num_agents}"
            )));
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= num_agents || b >= num_agents {
                return Err(Error::Topology(format!(
                    "edge ({a}, {b}) references an agent outside 0..{num_agents}"
                )));
            }
            if a == b {
                return Err(Error::Topology(format!("explicit self-loop on agent {a}")));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::Topology(format!("duplicate edge ({a}, {b})")));
            }
        }
        let graph = CommGraph {
            num_agents,
            edges: set,
        };
        let components = graph.component_count();
        if components != 1 {
            return Err(Error::Topology(format!(
                "graph is disconnected ({components} components over {num_agents} agents)"
            )));
        }
        Ok(graph)
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// Degree of each agent, not counting the implicit self-loop.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_agents];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    fn component_count(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.num_agents).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut count = self.num_agents;
        for &(a, b) in &self.edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra] = rb;
                count -= 1;
            }
        }
        count
    }
}

/// Reads a custom edge list: one `q r` pair of zero-based indices per line.
/// Blank lines and lines starting with `#` are ignored.
pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = std::fs::read_to_string(path)?;
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parsed = match fields.as_slice() {
            [a, b] => a.parse::<usize>().ok().zip(b.parse::<usize>().ok()),
            _ => None,
        };
        match parsed {
            Some(edge) => edges.push(edge),
            None => {
                return Err(Error::Topology(format!(
                    "{}:{}: expected `q r`, found `{line}`",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    Ok(edges)
}

/// Builds one of the named topologies over `num_agents` agents.
/// The star hub is agent 0 and the cycle links `i` to `(i + 1) mod Q`.
pub fn build_topology(kind: &Topology, num_agents: usize) -> Result<CommGraph> {
    if num_agents < 2 {
        return Err(Error::Topology(format!(
            "need at least 2 agents, got {num_agents}"
        )));
    }
    let q = num_agents;
    let edges: Vec<(usize, usize)> = match kind {
        // Q = 2 cycle degenerates to a single edge
        Topology::Cycle if q == 2 => vec![(0, 1)],
        Topology::Cycle => (0..q).map(|i| (i, (i + 1) % q)).collect(),
        Topology::Star => (1..q).map(|i| (0, i)).collect(),
        Topology::Complete => (0..q)
            .flat_map(|i| (i + 1..q).map(move |j| (i, j)))
            .collect(),
        Topology::Custom(path) => read_edge_list(path)?,
    };
    CommGraph::from_edges(q, &edges)
}

/// Symmetric doubly stochastic averaging weights.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    weights: Mat<f64>,
}

impl MixingMatrix {
    /// `I_Q`: no communication.
    pub fn identity(num_agents: usize) -> Self {
        MixingMatrix {
            weights: Mat::identity(num_agents, num_agents),
        }
    }

    /// Wraps a dense matrix after checking it is square, nonnegative,
    /// exactly symmetric and doubly stochastic (within `1e-12`).
    pub fn from_dense(weights: Mat<f64>) -> Result<Self> {
        let n = weights.nrows();
        check_len("mixing matrix columns", n, weights.ncols())?;
        for i in 0..n {
            let mut row = 0.0;
            let mut col = 0.0;
            for j in 0..n {
                let w = weights[(i, j)];
                if !(w >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "mixing weight ({i}, {j}) = {w} is negative or NaN"
                    )));
                }
                if w != weights[(j, i)] {
                    return Err(Error::InvalidArgument(format!(
                        "mixing matrix is not symmetric at ({i}, {j})"
                    )));
                }
                row += w;
                col += weights[(j, i)];
            }
            if (row - 1.0).abs() > 1e-12 || (col - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "row/column {i} of the mixing matrix does not sum to 1"
                )));
            }
        }
        Ok(MixingMatrix { weights })
    }

    pub fn num_agents(&self) -> usize {
        self.weights.nrows()
    }

    pub fn get(&self, q: usize, r: usize) -> f64 {
        self.weights[(q, r)]
    }

    pub fn as_mat(&self) -> MatRef<'_, f64> {
        self.weights.as_ref()
    }

    pub fn into_mat(self) -> Mat<f64> {
        self.weights
    }

    /// `W ⊗ I_P` as a matrix-free operator.
    pub fn lift(&self, block_dim: usize) -> LiftedOperator {
        LiftedOperator::new(self.weights.clone(), block_dim, LiftMode::Kron)
    }

    /// `(W - I_Q) ⊗ I_P` as a matrix-free operator.
    pub fn lift_shifted(&self, block_dim: usize) -> LiftedOperator {
        LiftedOperator::new(self.weights.clone(), block_dim, LiftMode::ShiftedKron)
    }
}

/// Metropolis–Hastings weights: `1 / (1 + max(deg q, deg r))` on every edge,
/// the remainder of each row on the diagonal.
pub fn metropolis_hastings(graph: &CommGraph) -> MixingMatrix {
    let q = graph.num_agents();
    let deg = graph.degrees();
    let mut w = Mat::<f64>::zeros(q, q);
    for (a, b) in graph.edges() {
        let weight = 1.0 / (1.0 + deg[a].max(deg[b]) as f64);
        w[(a, b)] = weight;
        w[(b, a)] = weight;
    }
    for i in 0..q {
        let off: f64 = (0..q).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    MixingMatrix { weights: w }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftMode {
    /// `base ⊗ I_P`
    Kron,
    /// `(base - I) ⊗ I_P`
    ShiftedKron,
}

/// Block operator acting on stacked vectors of `Q` blocks of length `P`,
/// applied without forming the `QP × QP` matrix.
#[derive(Debug, Clone)]
pub struct LiftedOperator {
    base: Mat<f64>,
    block_dim: usize,
    mode: LiftMode,
    // nonzero pattern of the effective Q×Q coefficient matrix, row by row
    rows: Vec<Vec<(usize, f64)>>,
}

impl LiftedOperator {
    pub fn new(base: Mat<f64>, block_dim: usize, mode: LiftMode) -> Self {
        assert_eq!(base.nrows(), base.ncols(), "lifted base must be square");
        let q = base.nrows();
        let rows = (0..q)
            .map(|i| {
                (0..q)
                    .filter_map(|j| {
                        let mut c = base[(i, j)];
                        if mode == LiftMode::ShiftedKron && i == j {
                            c -= 1.0;
                        }
                        (c != 0.0).then_some((j, c))
                    })
                    .collect()
            })
            .collect();
        LiftedOperator {
            base,
            block_dim,
            mode,
            rows,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.base.nrows()
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn mode(&self) -> LiftMode {
        self.mode
    }

    pub fn base(&self) -> MatRef<'_, f64> {
        self.base.as_ref()
    }

    /// Effective Q×Q coefficient `(q, r)`, i.e. `base` or `base - I`.
    pub fn coefficient(&self, q: usize, r: usize) -> f64 {
        let c = self.base[(q, r)];
        if self.mode == LiftMode::ShiftedKron && q == r {
            c - 1.0
        } else {
            c
        }
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; v.len()];
        self.apply_into(v, &mut out)?;
        Ok(out)
    }

    /// Output block `q` is `Σ_r c[q][r] · v_r`, summed in increasing `r`.
    /// Zero coefficients are skipped, so the identity base returns `v` bit for bit.
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        let p = self.block_dim;
        let n = self.num_blocks() * p;
        check_len("lifted operator input", n, v.len())?;
        check_len("lifted operator output", n, out.len())?;
        for (q, row) in self.rows.iter().enumerate() {
            let dst = &mut out[q * p..(q + 1) * p];
            match row.split_first() {
                None => dst.fill(0.0),
                Some((&(r0, c0), rest)) => {
                    for (d, s) in dst.iter_mut().zip(&v[r0 * p..(r0 + 1) * p]) {
                        *d = c0 * s;
                    }
                    for &(r, c) in rest {
                        for (d, s) in dst.iter_mut().zip(&v[r * p..(r + 1) * p]) {
                            *d += c * s;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Dense `QP × QP` Kronecker matrix; for tests and small systems.
    pub fn materialize(&self) -> Mat<f64> {
        let q = self.num_blocks();
        let p = self.block_dim;
        Mat::from_fn(q * p, q * p, |i, j| {
            if i % p == j % p {
                self.coefficient(i / p, j / p)
            } else {
                0.0
            }
        })
    }
}

/// Eigenvalues of a symmetric matrix in nondecreasing order.
pub(crate) fn symmetric_eigenvalues(m: MatRef<'_, f64>) -> Result<Vec<f64>> {
    m.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))
}

/// `1 - |λ₂|` where `λ₂` is the second-largest eigenvalue of `W` by magnitude.
pub fn spectral_gap(w: &MixingMatrix) -> Result<f64> {
    let mut mags: Vec<f64> = symmetric_eigenvalues(w.as_mat())?
        .into_iter()
        .map(f64::abs)
        .collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    Ok(match mags.get(1) {
        Some(l2) => 1.0 - l2,
        None => 1.0,
    })
}
