//! Time-varying communication graphs and their mixing matrices.

use std::collections::{BTreeSet, VecDeque};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Concern};

/// Edge set of one round. `(j, i)` means agent `i` receives from agent `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundGraph {
    pub n: usize,
    pub edges: BTreeSet<(usize, usize)>,
}

impl RoundGraph {
    pub fn empty(n: usize) -> Self {
        RoundGraph {
            n,
            edges: BTreeSet::new(),
        }
    }

    /// Adds `j → i` and `i → j`. Self-loops are ignored.
    pub fn add_undirected(&mut self, i: usize, j: usize) {
        assert!(i < self.n && j < self.n, "edge ({i},{j}) out of range for n = {}", self.n);
        if i != j {
            self.edges.insert((i, j));
            self.edges.insert((j, i));
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges.iter().all(|&(j, i)| self.edges.contains(&(i, j)))
    }

    pub fn ring(n: usize) -> Self {
        let mut g = RoundGraph::empty(n);
        if n >= 2 {
            for i in 0..n {
                g.add_undirected(i, (i + 1) % n);
            }
        }
        g
    }

    pub fn complete(n: usize) -> Self {
        let mut g = RoundGraph::empty(n);
        for i in 0..n {
            for j in i + 1..n {
                g.add_undirected(i, j);
            }
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    /// Erdős–Rényi edges plus one quarter of a fixed path per round, cycling
    /// through the four quarters.
    Paper4Quarters,
    Ring,
    Complete,
}

impl GraphKind {
    pub fn name(self) -> &'static str {
        match self {
            GraphKind::Paper4Quarters => "paper4quarters",
            GraphKind::Ring => "ring",
            GraphKind::Complete => "complete",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "paper4quarters" => Some(GraphKind::Paper4Quarters),
            "ring" => Some(GraphKind::Ring),
            "complete" => Some(GraphKind::Complete),
            _ => None,
        }
    }
}

/// Path edges `(k, k+1)` (0-based) added in round `t`.
///
/// The `n − 1` path edges are split into four consecutive blocks
/// `[⌊c(n−1)/4⌋, ⌊(c+1)(n−1)/4⌋)`, and round `t` uses block `(t − 1) mod 4`.
/// For `n = 100` this gives the 1-based ranges `1..=24`, `25..=49`,
/// `50..=74`, `75..=99`.
pub fn quarter_path_edges(t: usize, n: usize) -> std::ops::Range<usize> {
    assert!(t >= 1, "rounds are 1-based");
    let c = (t - 1) % 4;
    let edges = n.saturating_sub(1);
    (c * edges / 4)..((c + 1) * edges / 4)
}

/// Graph for round `t`.
pub fn gen_round_graph<R: Rng + ?Sized>(kind: GraphKind, t: usize, n: usize, p_edge: f64, rng: &mut R) -> RoundGraph {
    match kind {
        GraphKind::Ring => RoundGraph::ring(n),
        GraphKind::Complete => RoundGraph::complete(n),
        GraphKind::Paper4Quarters => {
            let mut g = RoundGraph::empty(n);
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random_bool(p_edge) {
                        g.add_undirected(i, j);
                    }
                }
            }
            for k in quarter_path_edges(t, n) {
                g.add_undirected(k, k + 1);
            }
            g
        }
    }
}

/// Graph generator configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub kind: GraphKind,
    pub p_edge: f64,
    /// window length for the joint strong-connectivity check
    pub b_window: usize,
}

impl Default for GraphSpec {
    fn default() -> Self {
        GraphSpec {
            kind: GraphKind::Paper4Quarters,
            p_edge: 0.1,
            b_window: 4,
        }
    }
}

impl GraphSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_edge) {
            return Err(Error::config("graph.p_edge", format!("must lie in [0, 1], got {}", self.p_edge)));
        }
        if self.b_window == 0 {
            return Err(Error::config("graph.b_window", "must be at least 1"));
        }
        Ok(())
    }

    /// Round-`t` graph drawn from the run's graph stream.
    pub fn round_graph(&self, seed: u64, t: usize, n: usize) -> RoundGraph {
        let mut rng = stream(seed, 0, Concern::Graph, t);
        gen_round_graph(self.kind, t, n, self.p_edge, &mut rng)
    }
}

/// Doubly stochastic, nonnegative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    w: Array2<f64>,
}

pub const STOCHASTIC_TOL: f64 = 1e-12;

impl MixingMatrix {
    /// Validates a user-supplied matrix.
    pub fn new(w: Array2<f64>) -> Result<Self> {
        let (r, c) = w.dim();
        if r != c || r == 0 {
            return Err(Error::Contract(format!("mixing matrix must be square and nonempty, got {r}×{c}")));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Contract("mixing matrix has a negative or non-finite entry".into()));
        }
        let m = MixingMatrix { w };
        let dev = m.stochasticity_deviation();
        if dev > STOCHASTIC_TOL {
            return Err(Error::Contract(format!(
                "mixing matrix is not doubly stochastic (max deviation {dev:e})"
            )));
        }
        Ok(m)
    }

    /// `W_ij = 1/n` on received edges `(j, i)`, `W_ii = 1 − Σ_j W_ij`.
    /// Only symmetric graphs yield unit column sums under this rule.
    pub fn from_graph(g: &RoundGraph) -> Result<Self> {
        if !g.is_symmetric() {
            return Err(Error::Contract(
                "the 1/n mixing rule requires a symmetric edge set".into(),
            ));
        }
        let n = g.n;
        let weight = 1.0 / n as f64;
        let mut w = Array2::zeros((n, n));
        for &(j, i) in &g.edges {
            w[[i, j]] = weight;
        }
        for i in 0..n {
            let off: f64 = w.row(i).sum();
            w[[i, i]] = 1.0 - off;
        }
        Ok(MixingMatrix { w })
    }

    pub fn identity(n: usize) -> Self {
        MixingMatrix { w: Array2::eye(n) }
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[[i, j]]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.w
    }

    /// Largest `|row sum − 1|` or `|column sum − 1|`.
    pub fn stochasticity_deviation(&self) -> f64 {
        let rows = self.w.rows().into_iter().map(|r| (r.sum() - 1.0).abs());
        let cols = self.w.columns().into_iter().map(|c| (c.sum() - 1.0).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }

    /// Smallest weight on the diagonal and on edges.
    pub fn min_positive_weight(&self) -> f64 {
        self.w.iter().filter(|v| **v > 0.0).cloned().fold(f64::INFINITY, f64::min)
    }
}

/// True iff the union of the window's edge sets is strongly connected.
pub fn check_b_connectivity(graphs: &[RoundGraph]) -> bool {
    let Some(first) = graphs.first() else {
        return false;
    };
    let n = first.n;
    if n <= 1 {
        return true;
    }
    let mut out = vec![Vec::new(); n];
    let mut inc = vec![Vec::new(); n];
    for g in graphs {
        for &(j, i) in &g.edges {
            out[j].push(i);
            inc[i].push(j);
        }
    }
    // strongly connected iff node 0 reaches all nodes in both directions
    reaches_all(&out, 0) && reaches_all(&inc, 0)
}

fn reaches_all(adj: &[Vec<usize>], start: usize) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                queue.push_back(w);
            }
        }
    }
    count == adj.len()
}
