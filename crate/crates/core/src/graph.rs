//! Communication graphs and Metropolis weights.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics;
use crate::rng::{seeded_rng, Stream};

pub const DEFAULT_MAX_RETRIES: usize = 100;

/// Undirected, connected agent graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    n_nodes: usize,
    positions: Option<Vec<[f64; 2]>>,
    /// Sorted `(i, j)` pairs with `i < j`.
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl CommGraph {
    /// Builds a graph from an explicit edge list. Rejects self-loops,
    /// duplicates, out-of-range endpoints and disconnected graphs.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Self::build(n_nodes, None, edges)
    }

    fn build(n_nodes: usize, positions: Option<Vec<[f64; 2]>>, edges: &[(usize, usize)]) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::InvalidArgument("graph needs at least one node".into()));
        }
        let mut normalized = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::InvalidArgument(format!("edge ({a}, {b}) out of range")));
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop at node {a}")));
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        let before = normalized.len();
        normalized.dedup();
        if normalized.len() != before {
            return Err(Error::InvalidArgument("duplicate edge".into()));
        }
        let mut adjacency = vec![Vec::new(); n_nodes];
        for &(a, b) in &normalized {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let g = CommGraph { n_nodes, positions, edges: normalized, adjacency };
        if !g.is_connected() {
            return Err(Error::Disconnected(0));
        }
        Ok(g)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn positions(&self) -> Option<&[[f64; 2]]> {
        self.positions.as_deref()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    /// Breadth-first search from node 0.
    pub fn is_connected(&self) -> bool {
        bfs_reaches_all(self.n_nodes, &self.adjacency)
    }

    /// Edge-list text: node count on the first line, then one `i j` per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{}\n", self.n_nodes);
        for &(a, b) in &self.edges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let n: usize = lines
            .next()
            .ok_or_else(|| Error::Parse("empty edge list".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("node count: {e}")))?;
        let mut edges = Vec::new();
        for line in lines {
            let mut parts = line.split_whitespace();
            let mut next = || -> Result<usize> {
                parts
                    .next()
                    .ok_or_else(|| Error::Parse(format!("bad edge line '{line}'")))?
                    .parse()
                    .map_err(|e| Error::Parse(format!("bad edge line '{line}': {e}")))
            };
            edges.push((next()?, next()?));
        }
        Self::from_edges(n, &edges)
    }
}

fn bfs_reaches_all(n: usize, adjacency: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == n
}

/// Random geometric graph on the unit square: `{i, j}` is an edge iff the
/// points are closer than `radius`. Positions are resampled until the graph
/// is connected, at most `max_retries` times. Uses the graph stream of `seed`
/// only.
pub fn random_geometric_graph(n: usize, radius: f64, seed: u64, max_retries: usize) -> Result<CommGraph> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    let mut rng = seeded_rng(seed, Stream::Graph.id());
    for _ in 0..max_retries.max(1) {
        let positions: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = positions[i][0] - positions[j][0];
                let dy = positions[i][1] - positions[j][1];
                if (dx * dx + dy * dy).sqrt() < radius {
                    edges.push((i, j));
                }
            }
        }
        match CommGraph::build(n, Some(positions), &edges) {
            Ok(g) => return Ok(g),
            Err(Error::Disconnected(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Disconnected(max_retries))
}

/// Symmetric, row-stochastic averaging matrix with a sparse row view used by
/// the blockwise products of the iteration engine.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    dense: DMatrix<f64>,
    /// Per row: nonzero `(column, weight)` entries, self included, ascending.
    rows: Vec<Vec<(usize, f64)>>,
}

/// `w_ij = 1 / (1 + max(deg i, deg j))` on edges, diagonal fills the row to 1.
pub fn metropolis_weights(g: &CommGraph) -> WeightMatrix {
    let n = g.n_nodes();
    let mut dense = DMatrix::zeros(n, n);
    for &(a, b) in g.edges() {
        let w = 1.0 / (1.0 + g.degree(a).max(g.degree(b)) as f64);
        dense[(a, b)] = w;
        dense[(b, a)] = w;
    }
    for i in 0..n {
        let off: f64 = g.neighbors(i).iter().map(|&j| dense[(i, j)]).sum();
        dense[(i, i)] = 1.0 - off;
    }
    WeightMatrix::from_dense_unchecked(dense)
}

impl WeightMatrix {
    fn from_dense_unchecked(dense: DMatrix<f64>) -> Self {
        let n = dense.nrows();
        let rows = (0..n)
            .map(|i| (0..n).filter(|&j| dense[(i, j)] != 0.0).map(|j| (j, dense[(i, j)])).collect())
            .collect();
        WeightMatrix { dense, rows }
    }

    /// Wraps an arbitrary square matrix. Used for tests and hand-built
    /// averaging schemes; no stochasticity is enforced.
    pub fn from_dense(dense: DMatrix<f64>) -> Result<Self> {
        if dense.nrows() != dense.ncols() {
            return Err(Error::NotSquare { rows: dense.nrows(), cols: dense.ncols() });
        }
        Ok(Self::from_dense_unchecked(dense))
    }

    pub fn n(&self) -> usize {
        self.dense.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.dense[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.dense
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// Blockwise product `(W ⊗ I_dim) z` into `out`.
    pub fn mix_into(&self, z: &[f64], dim: usize, out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.n() * dim);
        debug_assert_eq!(out.len(), z.len());
        for (i, block) in out.chunks_exact_mut(dim).enumerate() {
            block.fill(0.0);
            for &(j, w) in &self.rows[i] {
                let src = &z[j * dim..(j + 1) * dim];
                for (o, s) in block.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
    }

    pub fn max_symmetry_error(&self) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.dense[(i, j)] - self.dense[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn max_row_sum_error(&self) -> f64 {
        self.dense.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.dense.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `ρ(W − 11ᵀ/N)`, the consensus contraction factor.
    pub fn consensus_spectral_radius(&self) -> Result<f64> {
        let n = self.n();
        let shifted = self.dense.map(|w| w - 1.0 / n as f64);
        numerics::spectral_radius(&shifted)
    }

    /// CSV: n rows of n comma-separated reals.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.dense.row_iter() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}
