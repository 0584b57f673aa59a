//! Graph and dataset types, TU-format ingestion, stratified splitting and
//! Zipf-law imbalance construction.

mod format;
mod split;
pub mod synthetic;
mod tu;

pub use format::{read_dataset, read_dataset_str, write_dataset, write_dataset_string, FORMAT_HEADER};
pub use split::{
    allocate_counts, imbalance_factor, make_imbalanced, stratified_split, zipf_counts, SplitSpec,
};
pub use tu::{parse_tu_dataset, parse_tu_sources, write_tu_dataset, TuSources};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Undirected simple graph with dense node features.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    /// Normalized to `u < v`, sorted, no duplicates.
    edges: Vec<(usize, usize)>,
    features: Matrix,
}

impl Graph {
    /// Validates endpoints, rejects self-loops and duplicate undirected
    /// edges, and normalizes the edge list to sorted `(min, max)` pairs.
    pub fn new(num_nodes: usize, edges: Vec<(usize, usize)>, features: Matrix) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::InvalidGraph("graph has zero nodes".into()));
        }
        if features.rows() != num_nodes {
            return Err(Error::InvalidGraph(format!(
                "{} feature rows for {} nodes",
                features.rows(),
                num_nodes
            )));
        }
        let mut norm = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) outside {num_nodes} nodes"
                )));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop at node {u}")));
            }
            norm.push((u.min(v), u.max(v)));
        }
        norm.sort_unstable();
        if let Some(w) = norm.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidGraph(format!("duplicate edge {:?}", w[0])));
        }
        Ok(Graph {
            num_nodes,
            edges: norm,
            features,
        })
    }

    /// Like [`Graph::new`] but silently drops self-loops and duplicates.
    pub fn from_edges_lossy(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Matrix,
    ) -> Result<Self> {
        let mut norm: Vec<(usize, usize)> = edges
            .into_iter()
            .filter(|(u, v)| u != v)
            .map(|(u, v)| (u.min(v), u.max(v)))
            .collect();
        norm.sort_unstable();
        norm.dedup();
        Graph::new(num_nodes, norm, features)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.binary_search(&(u.min(v), u.max(v))).is_ok()
    }

    /// Adjacency lists, neighbors in ascending order.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Subgraph induced by `keep` (indices into this graph, any order).
    /// Nodes are renumbered by their position in ascending `keep` order.
    pub fn induced(&self, keep: &[usize]) -> Result<Graph> {
        let mut sorted = keep.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut remap = vec![usize::MAX; self.num_nodes];
        for (new, &old) in sorted.iter().enumerate() {
            if old >= self.num_nodes {
                return Err(Error::InvalidGraph(format!("node {old} out of range")));
            }
            remap[old] = new;
        }
        let edges = self
            .edges
            .iter()
            .filter(|(u, v)| remap[*u] != usize::MAX && remap[*v] != usize::MAX)
            .map(|&(u, v)| (remap[u], remap[v]))
            .collect();
        let d = self.feature_dim();
        let mut data = Vec::with_capacity(sorted.len() * d);
        for &old in &sorted {
            data.extend_from_slice(self.features.row(old));
        }
        Graph::new(sorted.len(), edges, Matrix::from_vec(sorted.len(), d, data)?)
    }

    /// Same graph with nodes relabeled: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.num_nodes;
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument("not a permutation".into()));
        }
        let d = self.feature_dim();
        let mut feats = Matrix::zeros(n, d);
        for (i, &p) in perm.iter().enumerate() {
            feats.row_mut(p).copy_from_slice(self.features.row(i));
        }
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        Graph::new(n, edges, feats)
    }

    pub(crate) fn with_features(&self, features: Matrix) -> Result<Graph> {
        Graph::new(self.num_nodes, self.edges.clone(), features)
    }
}

/// A graph and its class index in `0..K`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledGraph {
    pub graph: Graph,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    graphs: Vec<LabeledGraph>,
    num_classes: usize,
    feature_dim: usize,
}

impl Dataset {
    /// Checks labels against `num_classes`, a shared feature dimension, and
    /// that every class is represented.
    pub fn new(graphs: Vec<LabeledGraph>, num_classes: usize, feature_dim: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidDataset("zero classes".into()));
        }
        if feature_dim == 0 {
            return Err(Error::InvalidDataset("zero feature dimension".into()));
        }
        if num_classes > graphs.len() {
            return Err(Error::InvalidDataset(format!(
                "{num_classes} classes but only {} graphs",
                graphs.len()
            )));
        }
        let mut seen = vec![false; num_classes];
        for (i, g) in graphs.iter().enumerate() {
            if g.label >= num_classes {
                return Err(Error::InvalidDataset(format!(
                    "graph {i} has label {} with {num_classes} classes",
                    g.label
                )));
            }
            if g.graph.feature_dim() != feature_dim {
                return Err(Error::InvalidDataset(format!(
                    "graph {i} has feature dim {}, expected {feature_dim}",
                    g.graph.feature_dim()
                )));
            }
            seen[g.label] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidDataset(format!("class {c} has no graphs")));
        }
        Ok(Dataset {
            graphs,
            num_classes,
            feature_dim,
        })
    }

    pub fn graphs(&self) -> &[LabeledGraph] {
        &self.graphs
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for g in &self.graphs {
            counts[g.label] += 1;
        }
        counts
    }

    /// Indices of each class's graphs, in dataset order.
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.num_classes];
        for (i, g) in self.graphs.iter().enumerate() {
            members[g.label].push(i);
        }
        members
    }

    /// Sub-dataset of the given indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let graphs = indices
            .iter()
            .map(|&i| {
                self.graphs
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("graph index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(graphs, self.num_classes, self.feature_dim)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.label).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(n: usize) -> Matrix {
        Matrix::filled(n, 1, 1.0)
    }

    #[test]
    fn graph_invariants() {
        assert!(Graph::new(0, vec![], Matrix::zeros(0, 1)).is_err());
        assert!(Graph::new(2, vec![(0, 2)], feats(2)).is_err());
        assert!(Graph::new(2, vec![(1, 1)], feats(2)).is_err());
        assert!(Graph::new(2, vec![(0, 1), (1, 0)], feats(2)).is_err());
        assert!(Graph::new(2, vec![], feats(3)).is_err());
        let g = Graph::new(3, vec![(2, 0), (1, 0)], feats(3)).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2)]);
        assert_eq!(g.neighbors(), vec![vec![1, 2], vec![0], vec![0]]);
        let lossy = Graph::from_edges_lossy(3, [(0, 1), (1, 0), (2, 2)], feats(3)).unwrap();
        assert_eq!(lossy.edges(), &[(0, 1)]);
    }

    #[test]
    fn induced_and_permuted() {
        let f = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]);
        let g = Graph::new(4, vec![(0, 1), (1, 2), (2, 3)], f).unwrap();
        let s = g.induced(&[3, 1, 2]).unwrap();
        assert_eq!(s.num_nodes(), 3);
        assert_eq!(s.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(s.features().as_slice(), &[1.0, 2.0, 3.0]);

        let p = g.permuted(&[3, 2, 1, 0]).unwrap();
        assert_eq!(p.edges(), &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(p.features().as_slice(), &[3.0, 2.0, 1.0, 0.0]);
        assert!(g.permuted(&[0, 0, 1, 2]).is_err());
    }

    #[test]
    fn dataset_checks_labels_and_dims() {
        let lg = |label| LabeledGraph {
            graph: Graph::new(1, vec![], feats(1)).unwrap(),
            label,
        };
        assert!(Dataset::new(vec![lg(0), lg(2)], 2, 1).is_err());
        assert!(Dataset::new(vec![lg(0)], 2, 1).is_err());
        assert!(Dataset::new(vec![lg(0), lg(1)], 2, 2).is_err());
        let d = Dataset::new(vec![lg(0), lg(1), lg(1)], 2, 1).unwrap();
        assert_eq!(d.class_counts(), vec![1, 2]);
        assert_eq!(d.class_members(), vec![vec![0], vec![1, 2]]);
    }
}
