//! Static weighted social networks and the canonical topologies.
//!
//! Node indices are 0-based in the Rust API. Graph files, CLI output and
//! report files use 1-based indices.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interaction weights seen by every node at one time step.
///
/// `neighbors[i]` lists `(j, w_ij)` for the nodes `j` that influence `i`.
#[derive(Debug, Clone, Copy)]
pub struct Layer<'a> {
    pub self_weights: &'a [f64],
    pub neighbors: &'a [Vec<(usize, f64)>],
    pub degrees: &'a [f64],
}

/// Anything that supplies an interaction layer for time `t`.
pub trait Interaction: Sync {
    fn node_count(&self) -> usize;
    fn layer(&self, t: u64) -> Layer<'_>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Complete,
    Star,
    Cycle,
    Custom,
}

impl GraphKind {
    pub fn min_nodes(self) -> usize {
        match self {
            GraphKind::Cycle => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GraphKind::Complete => "complete",
            GraphKind::Star => "star",
            GraphKind::Cycle => "cycle",
            GraphKind::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "complete" => Ok(GraphKind::Complete),
            "star" => Ok(GraphKind::Star),
            "cycle" => Ok(GraphKind::Cycle),
            "custom" => Ok(GraphKind::Custom),
            other => Err(Error::Parse(format!("unknown graph kind `{other}`"))),
        }
    }
}

/// Undirected weighted graph with per-node self-confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    kind: GraphKind,
    n: usize,
    /// Canonical edge list, `i < j`, sorted.
    edges: Vec<(usize, usize, f64)>,
    self_weights: Vec<f64>,
    neighbors: Vec<Vec<(usize, f64)>>,
    degrees: Vec<f64>,
}

impl WeightedGraph {
    /// Builds a graph from 0-based undirected edges.
    pub fn new(n: usize, edges: &[(usize, usize, f64)], self_weights: Vec<f64>) -> Result<Self> {
        Self::with_kind(GraphKind::Custom, n, edges, self_weights)
    }

    fn with_kind(
        kind: GraphKind,
        n: usize,
        edges: &[(usize, usize, f64)],
        self_weights: Vec<f64>,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("graph needs at least 2 nodes, got {n}")));
        }
        if self_weights.len() != n {
            return Err(Error::invalid(format!(
                "expected {n} self-weights, got {}",
                self_weights.len()
            )));
        }
        if let Some(w) = self_weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::invalid(format!("self-weight must be finite and >= 0, got {w}")));
        }

        let mut seen = BTreeSet::new();
        let mut canonical = Vec::with_capacity(edges.len());
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::invalid(format!(
                    "edge {{{}, {}}} references a node outside 1..={n}",
                    i + 1,
                    j + 1
                )));
            }
            if i == j {
                return Err(Error::invalid(format!("self-loop edge at node {}", i + 1)));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::invalid(format!(
                    "edge {{{}, {}}} weight must be finite and > 0, got {w}",
                    i + 1,
                    j + 1
                )));
            }
            let key = (i.min(j), i.max(j));
            if !seen.insert(key) {
                return Err(Error::invalid(format!(
                    "duplicate edge {{{}, {}}}",
                    key.0 + 1,
                    key.1 + 1
                )));
            }
            canonical.push((key.0, key.1, w));
        }
        canonical.sort_by_key(|e| (e.0, e.1));

        let mut neighbors = vec![Vec::new(); n];
        for &(i, j, w) in &canonical {
            neighbors[i].push((j, w));
            neighbors[j].push((i, w));
        }
        for list in &mut neighbors {
            list.sort_by_key(|&(j, _)| j);
        }
        let degrees = neighbors
            .iter()
            .map(|list| list.iter().map(|&(_, w)| w).sum())
            .collect();

        Ok(Self {
            kind,
            n,
            edges: canonical,
            self_weights,
            neighbors,
            degrees,
        })
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn self_weights(&self) -> &[f64] {
        &self.self_weights
    }

    pub fn self_weight(&self, i: usize) -> f64 {
        self.self_weights[i]
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// `d_i`, the total edge weight incident to node `i`.
    pub fn degree(&self, i: usize) -> f64 {
        self.degrees[i]
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &(j, _) in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == self.n
    }

    /// Stable 64-bit fingerprint of the structure and weights (FNV-1a).
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::default();
        h.write_u64(self.n as u64);
        for &(i, j, w) in &self.edges {
            h.write_u64(i as u64);
            h.write_u64(j as u64);
            h.write_u64(w.to_bits());
        }
        for w in &self.self_weights {
            h.write_u64(w.to_bits());
        }
        h.finish()
    }

    /// Parses the graph file format (TOML).
    ///
    /// ```toml
    /// n = 4
    /// kind = "star"          # or give `edges` instead
    /// self_weight = 1.0      # uniform, or `self_weights = [...]`
    /// edges = ["1 2 1.0", "2 3 0.5"]
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: GraphFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.build()
    }

    pub fn to_toml_string(&self) -> String {
        let file = GraphFile {
            n: self.n,
            kind: None,
            self_weight: None,
            self_weights: Some(self.self_weights.clone()),
            edges: Some(
                self.edges
                    .iter()
                    .map(|&(i, j, w)| format!("{} {} {:?}", i + 1, j + 1, w))
                    .collect(),
            ),
        };
        toml::to_string(&file).expect("graph file serializes")
    }
}

impl Interaction for WeightedGraph {
    fn node_count(&self) -> usize {
        self.n
    }

    fn layer(&self, _t: u64) -> Layer<'_> {
        Layer {
            self_weights: &self.self_weights,
            neighbors: &self.neighbors,
            degrees: &self.degrees,
        }
    }
}

/// Canonical topology with unit edge weights and a uniform self-weight.
///
/// Star graphs put the hub at the last node; cycles connect `i` to `i + 1`
/// and the last node back to the first.
pub fn make_graph(kind: GraphKind, n: usize, self_weight: f64) -> Result<WeightedGraph> {
    if n < kind.min_nodes() {
        return Err(Error::invalid(format!(
            "{kind} graph needs n >= {}, got {n}",
            kind.min_nodes()
        )));
    }
    let edges: Vec<(usize, usize, f64)> = match kind {
        GraphKind::Complete => (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j, 1.0)))
            .collect(),
        GraphKind::Star => (0..n - 1).map(|i| (i, n - 1, 1.0)).collect(),
        GraphKind::Cycle => (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect(),
        GraphKind::Custom => {
            return Err(Error::invalid("custom graphs are built from an edge list"));
        }
    };
    WeightedGraph::with_kind(kind, n, &edges, vec![self_weight; n])
}

/// Ranges used by [`random_connected`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RandomGraphParams {
    /// Probability of each non-tree pair becoming an extra edge.
    pub extra_edge_prob: f64,
    pub edge_weight: (f64, f64),
    pub self_weight: (f64, f64),
}

impl Default for RandomGraphParams {
    fn default() -> Self {
        Self {
            extra_edge_prob: 0.2,
            edge_weight: (0.5, 2.0),
            self_weight: (0.1, 2.0),
        }
    }
}

/// Random spanning tree plus independent extra edges.
pub fn random_connected<R: Rng + ?Sized>(
    n: usize,
    params: &RandomGraphParams,
    rng: &mut R,
) -> Result<WeightedGraph> {
    if n < 2 {
        return Err(Error::invalid(format!("graph needs at least 2 nodes, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut pairs = BTreeSet::new();
    for k in 1..n {
        let parent = order[rng.gen_range(0..k)];
        let child = order[k];
        pairs.insert((parent.min(child), parent.max(child)));
    }
    for i in 0..n {
        for j in i + 1..n {
            if !pairs.contains(&(i, j)) && rng.gen_bool(params.extra_edge_prob) {
                pairs.insert((i, j));
            }
        }
    }
    let (wlo, whi) = params.edge_weight;
    let edges: Vec<_> = pairs
        .into_iter()
        .map(|(i, j)| (i, j, rng.gen_range(wlo..=whi)))
        .collect();
    let (slo, shi) = params.self_weight;
    let self_weights = (0..n).map(|_| rng.gen_range(slo..=shi)).collect();
    WeightedGraph::new(n, &edges, self_weights)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<GraphKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    self_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    self_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edges: Option<Vec<String>>,
}

impl GraphFile {
    fn build(self) -> Result<WeightedGraph> {
        let self_weights = match (self.self_weight, self.self_weights) {
            (Some(_), Some(_)) => {
                return Err(Error::Parse("give either self_weight or self_weights".into()))
            }
            (Some(w), None) => vec![w; self.n],
            (None, Some(ws)) => ws,
            (None, None) => return Err(Error::Parse("missing self_weight(s)".into())),
        };
        match (self.kind, self.edges) {
            (Some(_), Some(_)) => Err(Error::Parse("give either kind or edges, not both".into())),
            (None, None) => Err(Error::Parse("missing kind or edges".into())),
            (Some(GraphKind::Custom), None) => {
                Err(Error::Parse("custom graphs need an edge list".into()))
            }
            (Some(kind), None) => {
                let g = make_graph(kind, self.n, 0.0)?;
                WeightedGraph::with_kind(kind, self.n, g.edges(), self_weights)
            }
            (None, Some(lines)) => {
                let edges = lines
                    .iter()
                    .map(|l| parse_weighted_pair(l, self.n))
                    .collect::<Result<Vec<_>>>()?;
                WeightedGraph::new(self.n, &edges, self_weights)
            }
        }
    }
}

/// Parses `"i j w"` with 1-based indices into a 0-based triple.
pub(crate) fn parse_weighted_pair(line: &str, n: usize) -> Result<(usize, usize, f64)> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::Parse(format!("expected `i j w`, got `{line}`")));
    }
    let index = |s: &str| -> Result<usize> {
        let v: usize = s
            .parse()
            .map_err(|_| Error::Parse(format!("bad node index `{s}` in `{line}`")))?;
        if v == 0 || v > n {
            return Err(Error::Parse(format!("node index {v} outside 1..={n} in `{line}`")));
        }
        Ok(v - 1)
    };
    let w: f64 = parts[2]
        .parse()
        .map_err(|_| Error::Parse(format!("bad weight `{}` in `{line}`", parts[2])))?;
    Ok((index(parts[0])?, index(parts[1])?, w))
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Fnv1a(u64);

impl Default for Fnv1a {
    fn default() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv1a {
    pub(crate) fn write_u64(&mut self, v: u64) {
        for byte in v.to_le_bytes() {
            self.0 ^= byte as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn finish(self) -> u64 {
        self.0
    }
}
