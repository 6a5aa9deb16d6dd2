//! Communication graphs, mixing matrices, and threat-model checks.
//!
//! Node indices are `0..n`. The two nine-node layouts use `u1..u8 = 0..7` and
//! place the adversary `b` at index 8.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    /// Circulant graph of degree `k` over the honest nodes; Byzantine nodes keep
    /// their ring edges.
    Regular,
    Complete,
    #[serde(rename = "torus3x3")]
    Torus3x3,
    #[serde(rename = "dumbbell9")]
    Dumbbell9,
    StarFl,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 6] = [
        TopologyKind::Ring,
        TopologyKind::Regular,
        TopologyKind::Complete,
        TopologyKind::Torus3x3,
        TopologyKind::Dumbbell9,
        TopologyKind::StarFl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::Ring => "ring",
            TopologyKind::Regular => "regular",
            TopologyKind::Complete => "complete",
            TopologyKind::Torus3x3 => "torus3x3",
            TopologyKind::Dumbbell9 => "dumbbell9",
            TopologyKind::StarFl => "star_fl",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    num_nodes: usize,
    adjacency: Vec<BTreeSet<usize>>,
    byzantine: BTreeSet<usize>,
}

impl Topology {
    /// Builds a topology from an explicit undirected edge list.
    pub fn from_edges(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        byzantine: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::param("a topology needs at least one node"));
        }
        let mut adjacency = vec![BTreeSet::new(); num_nodes];
        for (a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::param(format!(
                    "edge {a}-{b} references a node outside 0..{num_nodes}"
                )));
            }
            if a == b {
                return Err(Error::param(format!("self-loop on node {a}; self weight is implicit")));
            }
            adjacency[a].insert(b);
            adjacency[b].insert(a);
        }
        let byzantine: BTreeSet<usize> = byzantine.into_iter().collect();
        if let Some(&b) = byzantine.iter().find(|&&b| b >= num_nodes) {
            return Err(Error::param(format!("byzantine node {b} is outside 0..{num_nodes}")));
        }
        if byzantine.len() == num_nodes {
            return Err(Error::param("at least one node must be honest"));
        }
        Ok(Self {
            num_nodes,
            adjacency,
            byzantine,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Neighbors of `i` in ascending order, excluding `i` itself.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[i].iter().copied()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].contains(&j)
    }

    pub fn byzantine(&self) -> &BTreeSet<usize> {
        &self.byzantine
    }

    pub fn is_byzantine(&self, i: usize) -> bool {
        self.byzantine.contains(&i)
    }

    pub fn honest(&self) -> Vec<usize> {
        (0..self.num_nodes).filter(|i| !self.byzantine.contains(i)).collect()
    }

    /// Undirected edges `(a, b)` with `a < b`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, nbrs) in self.adjacency.iter().enumerate() {
            for &b in nbrs.range(a + 1..) {
                out.push((a, b));
            }
        }
        out
    }

    /// Same graph with a different Byzantine set.
    pub fn with_byzantine(&self, byzantine: impl IntoIterator<Item = usize>) -> Result<Self> {
        Self::from_edges(self.num_nodes, self.edges(), byzantine)
    }

    /// Drops `node` and relabels the remaining nodes in order.
    pub fn without_node(&self, node: usize) -> Result<Self> {
        if node >= self.num_nodes {
            return Err(Error::param(format!("node {node} is outside 0..{}", self.num_nodes)));
        }
        let relabel = |x: usize| if x > node { x - 1 } else { x };
        let edges = self
            .edges()
            .into_iter()
            .filter(|&(a, b)| a != node && b != node)
            .map(|(a, b)| (relabel(a), relabel(b)));
        let byz = self.byzantine.iter().filter(|&&b| b != node).map(|&b| relabel(b));
        Self::from_edges(self.num_nodes - 1, edges, byz)
    }

    /// Plain-text edge list: a `# n=<n> byz=<i,j,..>` header then `a b` per line.
    pub fn to_edge_list(&self) -> String {
        let byz: Vec<String> = self.byzantine.iter().map(|b| b.to_string()).collect();
        let mut out = format!("# n={} byz={}\n", self.num_nodes, byz.join(","));
        for (a, b) in self.edges() {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::param("edge list is empty"))?;
        let mut n = None;
        let mut byz = Vec::new();
        for field in header.trim_start_matches('#').split_whitespace() {
            if let Some(v) = field.strip_prefix("n=") {
                n = Some(v.parse::<usize>().map_err(|_| Error::param(format!("bad node count {v:?}")))?);
            } else if let Some(v) = field.strip_prefix("byz=") {
                for part in v.split(',').filter(|p| !p.is_empty()) {
                    byz.push(part.parse::<usize>().map_err(|_| Error::param(format!("bad byzantine index {part:?}")))?);
                }
            }
        }
        let n = n.ok_or_else(|| Error::param("edge list header is missing n=<nodes>"))?;
        let mut edges = Vec::new();
        for (lineno, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::param(format!("line {}: bad node index {s:?}", lineno + 1)))
            };
            if parts.len() != 2 {
                return Err(Error::param(format!("line {}: expected `a b`", lineno + 1)));
            }
            edges.push((parse(parts[0])?, parse(parts[1])?));
        }
        Self::from_edges(n, edges, byz)
    }
}

/// Constructs one of the supported layouts.
///
/// `n` counts all nodes except for `StarFl`, where it counts users and the
/// server is appended as node `n`.
pub fn build_topology(
    kind: TopologyKind,
    n: usize,
    k: Option<usize>,
    byzantine: &BTreeSet<usize>,
) -> Result<Topology> {
    let byz = byzantine.iter().copied();
    match kind {
        TopologyKind::Ring => {
            if n < 3 {
                return Err(Error::param("ring requires n >= 3"));
            }
            Topology::from_edges(n, (0..n).map(|i| (i, (i + 1) % n)), byz)
        }
        TopologyKind::Complete => {
            if n < 2 {
                return Err(Error::param("complete requires n >= 2"));
            }
            let edges = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b)));
            Topology::from_edges(n, edges, byz)
        }
        TopologyKind::Torus3x3 => {
            if n != 9 {
                return Err(Error::param(format!("torus3x3 requires n = 9, got {n}")));
            }
            let mut edges = Vec::new();
            for r in 0..3 {
                for c in 0..3 {
                    let i = 3 * r + c;
                    edges.push((i, 3 * r + (c + 1) % 3));
                    edges.push((i, 3 * ((r + 1) % 3) + c));
                }
            }
            Topology::from_edges(9, edges, byz)
        }
        TopologyKind::Dumbbell9 => {
            if n != 9 {
                return Err(Error::param(format!("dumbbell9 requires n = 9, got {n}")));
            }
            let mut edges = Vec::new();
            for group in [[0usize, 1, 2, 3], [4, 5, 6, 7]] {
                for a in 0..4 {
                    for b in a + 1..4 {
                        edges.push((group[a], group[b]));
                    }
                }
            }
            edges.extend([(2, 4), (2, 8), (4, 8)]);
            Topology::from_edges(9, edges, byz)
        }
        TopologyKind::Regular => {
            let k = k.ok_or_else(|| Error::param("regular requires a degree k"))?;
            if k == 0 || k % 2 != 0 || k >= n {
                return Err(Error::param(format!(
                    "regular requires an even degree k with 0 < k < n, got k = {k}, n = {n}"
                )));
            }
            let honest: Vec<usize> = (0..n).filter(|i| !byzantine.contains(i)).collect();
            let m = honest.len();
            if k > m {
                return Err(Error::param(format!(
                    "regular degree k = {k} exceeds the {m} honest nodes"
                )));
            }
            let mut edges = Vec::new();
            for (pos, &a) in honest.iter().enumerate() {
                for off in 1..=k / 2 {
                    let b = honest[(pos + off) % m];
                    if a != b {
                        edges.push((a, b));
                    }
                }
            }
            for &b in byzantine {
                if b < n {
                    edges.push((b, (b + 1) % n));
                    edges.push(((b + n - 1) % n, b));
                }
            }
            Topology::from_edges(n, edges, byz)
        }
        TopologyKind::StarFl => {
            if n < 1 {
                return Err(Error::param("star_fl requires at least one user"));
            }
            if byzantine.contains(&n) {
                return Err(Error::param("the federated server cannot be byzantine"));
            }
            Topology::from_edges(n + 1, (0..n).map(|u| (u, n)), byz)
        }
    }
}

/// Row-stochastic, non-negative edge weights.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingMatrix {
    n: usize,
    weights: Vec<f64>,
}

impl MixingMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::param("mixing matrix must be square"));
        }
        if rows.iter().flatten().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::param("mixing weights must be finite and non-negative"));
        }
        Ok(Self {
            n,
            weights: rows.into_iter().flatten().collect(),
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).iter().sum()
    }

    pub fn column_sum(&self, j: usize) -> f64 {
        (0..self.n).map(|i| self.get(i, j)).sum()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (i + 1..self.n).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    pub fn is_doubly_stochastic(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (self.row_sum(i) - 1.0).abs() <= tol && (self.column_sum(i) - 1.0).abs() <= tol)
    }
}

/// Whether a node's own update takes part in its aggregation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelfWeight {
    /// `W_ij = 1 / |N_i ∪ {i}|` over neighbors and self.
    #[default]
    Include,
    /// `W_ij = 1 / |N_i|` over neighbors only; `W_ii = 0`.
    Exclude,
}

/// Equal weights over each node's neighborhood, self included.
pub fn uniform_mixing(topology: &Topology) -> MixingMatrix {
    uniform_mixing_with(topology, SelfWeight::Include)
}

pub fn uniform_mixing_with(topology: &Topology, self_weight: SelfWeight) -> MixingMatrix {
    let n = topology.num_nodes();
    let mut weights = vec![0.0; n * n];
    for i in 0..n {
        let deg = topology.degree(i);
        let include_self = self_weight == SelfWeight::Include || deg == 0;
        let count = deg + usize::from(include_self);
        let w = 1.0 / count as f64;
        if include_self {
            weights[i * n + i] = w;
        }
        for j in topology.neighbors(i) {
            weights[i * n + j] = w;
        }
    }
    MixingMatrix { n, weights }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationReport {
    pub connected: bool,
    pub honest_subgraph_connected: bool,
    pub symmetric: bool,
    pub doubly_stochastic: bool,
    pub per_node_degree: Vec<usize>,
}

/// Annotates a topology and its mixing matrix; never rejects.
pub fn validate_topology(topology: &Topology, mixing: &MixingMatrix) -> ValidationReport {
    let all: Vec<usize> = (0..topology.num_nodes()).collect();
    ValidationReport {
        connected: induced_connected(topology, &all),
        honest_subgraph_connected: induced_connected(topology, &topology.honest()),
        symmetric: mixing.is_symmetric(1e-12),
        doubly_stochastic: mixing.is_doubly_stochastic(1e-9),
        per_node_degree: (0..topology.num_nodes()).map(|i| topology.degree(i)).collect(),
    }
}

fn induced_connected(topology: &Topology, nodes: &[usize]) -> bool {
    let Some(&start) = nodes.first() else {
        return true;
    };
    let member: BTreeSet<usize> = nodes.iter().copied().collect();
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for v in topology.neighbors(u) {
            if member.contains(&v) && seen.insert(v) {
                queue.push_back(v);
            }
        }
    }
    seen.len() == member.len()
}

/// Total weight node `i` assigns to Byzantine senders.
pub fn byzantine_edge_weight(mixing: &MixingMatrix, i: usize, byzantine: &BTreeSet<usize>) -> Result<f64> {
    if byzantine.contains(&i) {
        return Err(Error::param(format!("node {i} is byzantine; delta is defined for honest nodes")));
    }
    if i >= mixing.size() {
        return Err(Error::param(format!("node {i} is outside the mixing matrix")));
    }
    Ok(byzantine.iter().filter(|&&b| b < mixing.size()).map(|&b| mixing.get(i, b)).sum())
}
