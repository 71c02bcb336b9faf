//! Weighted directed influence graph, source vectors, degrees and PageRank.
//!
//! The influence matrix `A` is stored row-compressed: row `i` lists the
//! vertices `j` that `i` influences together with the weight `a_ij`.
//! Propagation along `Aᵀ` therefore scatters each row, so no transpose is
//! ever materialized.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One weighted interaction `src → dst`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub weight: f64,
}

impl Edge {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, weight: f64) -> Self {
        Self {
            src: src.into(),
            dst: dst.into(),
            weight,
        }
    }
}

/// Immutable sparse influence graph.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceGraph {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

/// Result of [`build_influence_graph`]: the graph plus construction warnings.
#[derive(Debug, Clone)]
pub struct GraphBuild {
    pub graph: InfluenceGraph,
    pub self_loops_dropped: usize,
}

/// Builds a graph from an edge list.
///
/// Vertices are numbered in order of first appearance (source before
/// destination within each edge). Duplicate pairs are summed and self-loops
/// are dropped.
pub fn build_influence_graph(edges: &[Edge]) -> Result<GraphBuild> {
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for e in edges {
        for id in [&e.src, &e.dst] {
            if !index.contains_key(id) {
                index.insert(id.clone(), ids.len());
                ids.push(id.clone());
            }
        }
    }
    InfluenceGraph::assemble(ids, index, edges)
}

impl InfluenceGraph {
    /// Builds a graph over an explicit vertex order. Every edge endpoint must
    /// be listed in `ids`.
    pub fn with_vertices(ids: Vec<String>, edges: &[Edge]) -> Result<GraphBuild> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateVertex(id.clone()));
            }
        }
        for e in edges {
            for id in [&e.src, &e.dst] {
                if !index.contains_key(id) {
                    return Err(Error::UnknownVertex(id.clone()));
                }
            }
        }
        Self::assemble(ids, index, edges)
    }

    /// An edgeless graph on the given vertices.
    pub fn edgeless(ids: Vec<String>) -> Result<Self> {
        Ok(Self::with_vertices(ids, &[])?.graph)
    }

    fn assemble(
        ids: Vec<String>,
        index: HashMap<String, usize>,
        edges: &[Edge],
    ) -> Result<GraphBuild> {
        let n = ids.len();
        let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        let mut self_loops = 0usize;
        for (k, e) in edges.iter().enumerate() {
            if !(e.weight >= 0.0) || !e.weight.is_finite() {
                return Err(Error::NegativeWeight {
                    index: k,
                    weight: e.weight,
                });
            }
            let (i, j) = (index[&e.src], index[&e.dst]);
            if i == j {
                self_loops += 1;
                continue;
            }
            *rows[i].entry(j).or_insert(0.0) += e.weight;
        }
        if self_loops > 0 {
            warn!("dropped {self_loops} self-loop edge(s)");
        }
        Ok(GraphBuild {
            graph: Self::from_rows(ids, index, rows),
            self_loops_dropped: self_loops,
        })
    }

    fn from_rows(
        ids: Vec<String>,
        index: HashMap<String, usize>,
        rows: Vec<BTreeMap<usize, f64>>,
    ) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (j, w) in row {
                if w > 0.0 {
                    cols.push(j);
                    weights.push(w);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            ids,
            index,
            row_ptr,
            cols,
            weights,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.ids.len()
    }

    /// Number of strictly positive entries of `A`.
    pub fn edge_count(&self) -> usize {
        self.cols.len()
    }

    pub fn vertex_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Out-neighbours of `i` with their weights, in ascending vertex order.
    pub fn out_edges(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.weights[range].iter().copied())
    }

    /// `a_ij`, zero when absent.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[range.clone()].binary_search(&j) {
            Ok(k) => self.weights[range.start + k],
            Err(_) => 0.0,
        }
    }

    /// All positive entries as `(i, j, a_ij)`, row-major.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_vertices()).flat_map(move |i| self.out_edges(i).map(move |(j, w)| (i, j, w)))
    }

    /// Edge list with string ids, row-major.
    pub fn edges(&self) -> Vec<Edge> {
        self.entries()
            .map(|(i, j, w)| Edge::new(self.ids[i].clone(), self.ids[j].clone(), w))
            .collect()
    }

    /// `Aᵀ w`: entry `j` is `Σ_i a_ij w_i`.
    pub fn propagate(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_vertices()];
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            for (j, a) in self.out_edges(i) {
                out[j] += a * wi;
            }
        }
        out
    }

    /// Dense copy of `A`, row-major. Intended for small graphs and tests.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n_vertices();
        let mut dense = vec![vec![0.0; n]; n];
        for (i, j, w) in self.entries() {
            dense[i][j] = w;
        }
        dense
    }

    /// Divides each row by its largest weight so every weight lies in (0, 1].
    pub fn normalize_rows(&self) -> Self {
        let mut out = self.clone();
        for i in 0..out.n_vertices() {
            let range = out.row_ptr[i]..out.row_ptr[i + 1];
            let max = out.weights[range.clone()]
                .iter()
                .copied()
                .fold(0.0_f64, f64::max);
            if max > 0.0 {
                for w in &mut out.weights[range] {
                    *w /= max;
                }
            }
        }
        out
    }

    /// Relabels vertices: old vertex `i` becomes new vertex `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_vertices();
        if perm.len() != n {
            return Err(Error::Dimension {
                what: "permutation",
                expected: n,
                got: perm.len(),
            });
        }
        let mut ids = vec![String::new(); n];
        for (old, &new) in perm.iter().enumerate() {
            ids[new] = self.ids[old].clone();
        }
        let edges = self.edges();
        Ok(Self::with_vertices(ids, &edges)?.graph)
    }

    /// Graphviz rendering; edge labels carry the weights.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph influence {\n");
        for id in &self.ids {
            let _ = writeln!(out, "  \"{}\";", escape_dot(id));
        }
        for (i, j, w) in self.entries() {
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [weight={w}, label=\"{w}\"];",
                escape_dot(&self.ids[i]),
                escape_dot(&self.ids[j])
            );
        }
        out.push_str("}\n");
        out
    }
}

fn escape_dot(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Binary treatment vector marking narrative sources.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SourceVector(Vec<bool>);

impl SourceVector {
    pub fn new(z: Vec<bool>) -> Self {
        Self(z)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![false; n])
    }

    /// Vector with a single source at `i`.
    pub fn unit(n: usize, i: usize) -> Self {
        let mut z = Self::zeros(n);
        z.0[i] = true;
        z
    }

    /// Builds from 0/1 integers; anything else is rejected.
    pub fn from_indicators(values: &[u8]) -> Result<Self> {
        values
            .iter()
            .map(|&v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Parse(format!("source indicator {other} is not 0/1"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Copy with entry `i` set to `value`.
    pub fn with(&self, i: usize, value: bool) -> Self {
        let mut z = self.clone();
        z.0[i] = value;
        z
    }

    /// `z_{i+}`: vertex `i` forced to be a source.
    pub fn plus(&self, i: usize) -> Self {
        self.with(i, true)
    }

    /// `z_{i−}`: vertex `i` forced not to be a source.
    pub fn minus(&self, i: usize) -> Self {
        self.with(i, false)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Per-vertex degree statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Degrees {
    pub out_degree: Vec<usize>,
    pub in_degree: Vec<usize>,
    pub out_strength: Vec<f64>,
}

pub fn degrees(g: &InfluenceGraph) -> Degrees {
    let n = g.n_vertices();
    let mut d = Degrees {
        out_degree: vec![0; n],
        in_degree: vec![0; n],
        out_strength: vec![0.0; n],
    };
    for (i, j, w) in g.entries() {
        d.out_degree[i] += 1;
        d.in_degree[j] += 1;
        d.out_strength[i] += w;
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PageRankConfig {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PageRankConfig {
    fn default() -> Self {
        Self {
            damping: 0.85,
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralityVector {
    pub scores: Vec<f64>,
    pub damping: f64,
}

/// PageRank by power iteration on the random walk that leaves `i` towards
/// `j` with probability `a_ij / Σ_k a_ik`. Dangling mass is spread uniformly.
pub fn pagerank(g: &InfluenceGraph, cfg: PageRankConfig) -> Result<CentralityVector> {
    let n = g.n_vertices();
    if n == 0 {
        return Err(Error::Config("pagerank needs at least one vertex".into()));
    }
    if !(cfg.damping > 0.0 && cfg.damping < 1.0) {
        return Err(Error::Config(format!(
            "damping {} outside (0, 1)",
            cfg.damping
        )));
    }
    let strength = degrees(g).out_strength;
    let nf = n as f64;
    let mut rank = vec![1.0 / nf; n];
    let mut residual = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        let dangling: f64 = (0..n)
            .filter(|&i| strength[i] == 0.0)
            .map(|i| rank[i])
            .sum();
        let base = (1.0 - cfg.damping) / nf + cfg.damping * dangling / nf;
        let mut next = vec![base; n];
        for i in 0..n {
            if strength[i] == 0.0 {
                continue;
            }
            let share = cfg.damping * rank[i] / strength[i];
            for (j, w) in g.out_edges(i) {
                next[j] += share * w;
            }
        }
        // renormalize against rounding drift
        let total: f64 = next.iter().sum();
        for v in &mut next {
            *v /= total;
        }
        residual = next.iter().zip(&rank).map(|(a, b)| (a - b).abs()).sum();
        rank = next;
        if residual < cfg.tol {
            return Ok(CentralityVector {
                scores: rank,
                damping: cfg.damping,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: cfg.max_iter,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn chain() -> InfluenceGraph {
        build_influence_graph(&[Edge::new("a", "b", 2.0), Edge::new("b", "c", 1.0)])
            .unwrap()
            .graph
    }

    #[test]
    fn builds_chain() {
        let g = chain();
        assert_eq!(g.n_vertices(), 3);
        assert_eq!(g.vertex_ids(), ["a", "b", "c"]);
        assert_eq!(g.weight(0, 1), 2.0);
        assert_eq!(g.weight(1, 2), 1.0);
        assert_eq!(g.weight(1, 0), 0.0);
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn duplicates_are_summed() {
        let g = build_influence_graph(&[Edge::new("a", "b", 1.0), Edge::new("a", "b", 2.0)])
            .unwrap()
            .graph;
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.weight(0, 1), 3.0);
    }

    #[test]
    fn self_loop_dropped() {
        let b = build_influence_graph(&[Edge::new("a", "a", 5.0)]).unwrap();
        assert_eq!(b.graph.n_vertices(), 1);
        assert_eq!(b.graph.edge_count(), 0);
        assert_eq!(b.self_loops_dropped, 1);
    }

    #[test]
    fn negative_weight_rejected() {
        let err = build_influence_graph(&[Edge::new("a", "b", 1.0), Edge::new("b", "c", -0.5)])
            .unwrap_err();
        assert!(matches!(err, Error::NegativeWeight { index: 1, .. }));
    }

    #[test]
    fn zero_weight_keeps_vertices_but_no_edge() {
        let g = build_influence_graph(&[Edge::new("a", "b", 0.0)]).unwrap().graph;
        assert_eq!(g.n_vertices(), 2);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn unknown_vertex_in_explicit_order() {
        let err = InfluenceGraph::with_vertices(vec!["a".into()], &[Edge::new("a", "b", 1.0)])
            .unwrap_err();
        assert!(matches!(err, Error::UnknownVertex(ref id) if id == "b"));
    }

    #[test]
    fn chain_degrees() {
        let d = degrees(&chain());
        assert_eq!(d.out_degree, vec![1, 1, 0]);
        assert_eq!(d.in_degree, vec![0, 1, 1]);
        assert_eq!(d.out_strength, vec![2.0, 1.0, 0.0]);
    }

    #[test]
    fn empty_degrees() {
        let g = InfluenceGraph::edgeless(vec!["a".into(), "b".into()]).unwrap();
        let d = degrees(&g);
        assert_eq!(d.out_degree, vec![0, 0]);
        assert_eq!(d.in_degree, vec![0, 0]);
        assert_eq!(d.out_strength, vec![0.0, 0.0]);
    }

    #[test]
    fn star_degrees() {
        let edges: Vec<_> = (0..3).map(|k| Edge::new("hub", format!("l{k}"), 1.0)).collect();
        let d = degrees(&build_influence_graph(&edges).unwrap().graph);
        assert_eq!(d.out_degree[0], 3);
        assert_eq!(&d.in_degree[1..], &[1, 1, 1]);
    }

    #[test]
    fn pagerank_symmetric_pair() {
        let g = build_influence_graph(&[Edge::new("a", "b", 1.0), Edge::new("b", "a", 1.0)])
            .unwrap()
            .graph;
        let pr = pagerank(&g, PageRankConfig::default()).unwrap();
        assert_abs_diff_eq!(pr.scores[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(pr.scores[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn pagerank_single_vertex() {
        let g = InfluenceGraph::edgeless(vec!["a".into()]).unwrap();
        let pr = pagerank(&g, PageRankConfig::default()).unwrap();
        assert_eq!(pr.scores, vec![1.0]);
    }

    #[test]
    fn pagerank_reports_residual_on_budget_exhaustion() {
        let g = chain();
        let cfg = PageRankConfig {
            max_iter: 2,
            ..Default::default()
        };
        match pagerank(&g, cfg) {
            Err(Error::NoConvergence {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn source_vector_variants() {
        let z = SourceVector::new(vec![true, false, true]);
        assert_eq!(z.plus(1).as_slice(), &[true, true, true]);
        assert_eq!(z.minus(0).as_slice(), &[false, false, true]);
        assert_eq!(z.count(), 2);
        assert!(SourceVector::from_indicators(&[0, 2]).is_err());
    }

    #[test]
    fn normalize_rows_bounds_weights() {
        let g = build_influence_graph(&[
            Edge::new("a", "b", 4.0),
            Edge::new("a", "c", 2.0),
            Edge::new("b", "c", 3.0),
        ])
        .unwrap()
        .graph
        .normalize_rows();
        assert_eq!(g.weight(0, 1), 1.0);
        assert_eq!(g.weight(0, 2), 0.5);
        assert_eq!(g.weight(1, 2), 1.0);
    }

    #[test]
    fn dot_export_lists_edges() {
        let dot = chain().to_dot();
        assert!(dot.starts_with("digraph"));
        assert!(dot.contains("\"a\" -> \"b\""));
    }
}
