//! Stochastic graph augmentations used to build the two views of each graph.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graphdata::Graph;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AugmentationKind {
    NodeDropping,
    EdgePerturbation,
    AttributeMasking,
    Subgraph,
}

pub const ALL_KINDS: [AugmentationKind; 4] = [
    AugmentationKind::NodeDropping,
    AugmentationKind::EdgePerturbation,
    AugmentationKind::AttributeMasking,
    AugmentationKind::Subgraph,
];

pub const DEFAULT_RATIO: f64 = 0.2;

impl AugmentationKind {
    pub fn name(self) -> &'static str {
        match self {
            AugmentationKind::NodeDropping => "node-dropping",
            AugmentationKind::EdgePerturbation => "edge-perturbation",
            AugmentationKind::AttributeMasking => "attribute-masking",
            AugmentationKind::Subgraph => "subgraph",
        }
    }

    /// Whether `graph` meets this kind's preconditions.
    pub fn applies_to(self, graph: &Graph) -> bool {
        match self {
            AugmentationKind::NodeDropping | AugmentationKind::Subgraph => graph.num_nodes() >= 2,
            AugmentationKind::EdgePerturbation => graph.num_edges() >= 1,
            AugmentationKind::AttributeMasking => true,
        }
    }
}

impl fmt::Display for AugmentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugmentationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_KINDS
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown augmentation `{s}`")))
    }
}

pub fn sample_kind(rng: &mut impl Rng) -> AugmentationKind {
    ALL_KINDS[rng.gen_range(0..ALL_KINDS.len())]
}

fn check_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("augmentation ratio must lie in (0, 1), got {ratio}")))
    }
}

fn fraction(ratio: f64, n: usize) -> usize {
    (ratio * n as f64).floor() as usize
}

/// Apply one augmentation; deterministic in `(graph, kind, ratio, seed)`.
pub fn augment(graph: &Graph, kind: AugmentationKind, ratio: f64, seed: u64) -> Result<Graph> {
    check_ratio(ratio)?;
    if !kind.applies_to(graph) {
        return Err(Error::InvalidGraph(format!(
            "{kind} needs {} (graph has {} nodes, {} edges)",
            if kind == AugmentationKind::EdgePerturbation { "an edge" } else { "two nodes" },
            graph.num_nodes(),
            graph.num_edges()
        )));
    }
    let mut r = rng::rng(seed);
    let n = graph.num_nodes();
    match kind {
        AugmentationKind::NodeDropping => {
            let drop = fraction(ratio, n).min(n - 1);
            let dropped: HashSet<usize> = sample(&mut r, n, drop).into_iter().collect();
            let keep: Vec<usize> = (0..n).filter(|v| !dropped.contains(v)).collect();
            graph.induced(&keep)
        }
        AugmentationKind::AttributeMasking => {
            let mut features = graph.features().clone();
            for v in sample(&mut r, n, fraction(ratio, n)) {
                features.row_mut(v).fill(0.0);
            }
            graph.with_features(features)
        }
        AugmentationKind::EdgePerturbation => perturb_edges(graph, fraction(ratio, graph.num_edges()), &mut r),
        AugmentationKind::Subgraph => {
            let target = (((1.0 - ratio) * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
            graph.induced(&random_walk_nodes(graph, target, &mut r))
        }
    }
}

/// Remove `k` random edges and add `k` edges absent from the original.
/// If the complement holds fewer than `k` pairs, removed edges are put back
/// to keep the edge count.
fn perturb_edges(graph: &Graph, k: usize, r: &mut rng::Rng) -> Result<Graph> {
    let edges = graph.edges();
    let n = graph.num_nodes();
    let removed: HashSet<usize> = sample(r, edges.len(), k).into_iter().collect();
    let mut kept: Vec<(usize, usize)> = edges
        .iter()
        .enumerate()
        .filter(|(i, _)| !removed.contains(i))
        .map(|(_, &e)| e)
        .collect();
    let pairs = n * (n - 1) / 2;
    let free = pairs - edges.len();
    let added: Vec<(usize, usize)> = if free >= 4 * k {
        let mut chosen = HashSet::with_capacity(k);
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let u = r.gen_range(0..n);
            let v = r.gen_range(0..n);
            let e = (u.min(v), u.max(v));
            if u != v && !graph.has_edge(u, v) && chosen.insert(e) {
                out.push(e);
            }
        }
        out
    } else {
        let mut complement = Vec::with_capacity(free);
        for u in 0..n {
            for v in u + 1..n {
                if !graph.has_edge(u, v) {
                    complement.push((u, v));
                }
            }
        }
        let take = k.min(complement.len());
        let mut out: Vec<(usize, usize)> = sample(r, complement.len(), take).into_iter().map(|i| complement[i]).collect();
        let mut back: Vec<usize> = removed.into_iter().collect();
        back.sort_unstable();
        out.extend(back.into_iter().take(k - take).map(|i| edges[i]));
        out
    };
    kept.extend(added);
    Graph::new(n, kept, graph.features().clone())
}

/// Grow a node set by a uniform random walk until it holds `target` nodes.
/// When the walk's connected component is used up (an isolated node is the
/// smallest case), it restarts from a random unvisited node.
fn random_walk_nodes(graph: &Graph, target: usize, r: &mut rng::Rng) -> Vec<usize> {
    let n = graph.num_nodes();
    let adj = graph.neighbors();
    let (component, sizes) = components(&adj);
    let mut left = sizes;
    let mut visited = vec![false; n];
    let mut out = Vec::with_capacity(target);
    let mut visit = |v: usize, visited: &mut Vec<bool>, out: &mut Vec<usize>| {
        visited[v] = true;
        out.push(v);
        left[component[v]] -= 1;
        left[component[v]] == 0
    };
    let mut cur = r.gen_range(0..n);
    let mut exhausted = visit(cur, &mut visited, &mut out);
    while out.len() < target {
        if exhausted {
            let fresh: Vec<usize> = (0..n).filter(|&v| !visited[v]).collect();
            cur = fresh[r.gen_range(0..fresh.len())];
            exhausted = visit(cur, &mut visited, &mut out);
            continue;
        }
        cur = adj[cur][r.gen_range(0..adj[cur].len())];
        if !visited[cur] {
            exhausted = visit(cur, &mut visited, &mut out);
        }
    }
    out
}

/// Component id per node and the size of each component.
fn components(adj: &[Vec<usize>]) -> (Vec<usize>, Vec<usize>) {
    let mut comp = vec![usize::MAX; adj.len()];
    let mut sizes = Vec::new();
    for start in 0..adj.len() {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut stack = vec![start];
        comp[start] = id;
        let mut size = 0;
        while let Some(v) = stack.pop() {
            size += 1;
            for &u in &adj[v] {
                if comp[u] == usize::MAX {
                    comp[u] = id;
                    stack.push(u);
                }
            }
        }
        sizes.push(size);
    }
    (comp, sizes)
}

/// Two independent applications of `kind`.
pub fn view_pair(graph: &Graph, kind: AugmentationKind, ratio: f64, seed: u64) -> Result<(Graph, Graph)> {
    let a = augment(graph, kind, ratio, rng::derive(seed, &[1]))?;
    let b = augment(graph, kind, ratio, rng::derive(seed, &[2]))?;
    Ok((a, b))
}

/// Sample one kind from `seed`, then build both views with it.
pub fn sample_view_pair(graph: &Graph, ratio: f64, seed: u64) -> Result<(Graph, Graph)> {
    let kind = sample_kind(&mut rng::child(seed, &[0]));
    view_pair(graph, kind, ratio, seed)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::autodiff::Matrix;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        let f = (0..n * 2).map(|i| i as f64 + 1.0).collect();
        Graph::new(n, edges.to_vec(), Matrix::from_vec(n, 2, f).unwrap()).unwrap()
    }

    fn path(n: usize) -> Graph {
        graph(n, &(1..n).map(|v| (v - 1, v)).collect::<Vec<_>>())
    }

    #[test]
    fn node_dropping_counts() {
        let g = path(10);
        let out = augment(&g, AugmentationKind::NodeDropping, 0.2, 3).unwrap();
        assert_eq!(out.num_nodes(), 8);
        let out = augment(&path(2), AugmentationKind::NodeDropping, 0.99, 3).unwrap();
        assert_eq!(out.num_nodes(), 1);
    }

    #[test]
    fn attribute_masking_keeps_topology() {
        let g = path(10);
        let out = augment(&g, AugmentationKind::AttributeMasking, 0.3, 1).unwrap();
        assert_eq!(out.edges(), g.edges());
        let zero_rows = (0..10).filter(|&v| out.features().row(v).iter().all(|&x| x == 0.0)).count();
        assert_eq!(zero_rows, 3);
    }

    #[test]
    fn edge_perturbation_preserves_edge_count() {
        let g = path(12);
        for seed in 0..20 {
            let out = augment(&g, AugmentationKind::EdgePerturbation, 0.3, seed).unwrap();
            assert_eq!(out.num_edges(), g.num_edges());
            let changed = g.edges().iter().filter(|&&(u, v)| !out.has_edge(u, v)).count();
            assert_eq!(changed, 3);
        }
        // Complete graph: nothing to add, removed edges go back.
        let k4 = graph(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        let out = augment(&k4, AugmentationKind::EdgePerturbation, 0.5, 0).unwrap();
        assert_eq!(out.edges(), k4.edges());
    }

    #[test]
    fn subgraph_size_and_connectivity() {
        let g = path(10);
        for seed in 0..20 {
            let out = augment(&g, AugmentationKind::Subgraph, 0.2, seed).unwrap();
            assert_eq!(out.num_nodes(), 8);
            // A walk on a path covers a contiguous stretch.
            assert_eq!(out.num_edges(), 7);
        }
        let scattered = graph(5, &[]);
        assert_eq!(augment(&scattered, AugmentationKind::Subgraph, 0.5, 0).unwrap().num_nodes(), 3);
    }

    #[test]
    fn preconditions_and_ratio() {
        let single = graph(1, &[]);
        assert!(augment(&single, AugmentationKind::NodeDropping, 0.2, 0).is_err());
        assert!(augment(&single, AugmentationKind::Subgraph, 0.2, 0).is_err());
        assert!(augment(&single, AugmentationKind::EdgePerturbation, 0.2, 0).is_err());
        assert!(augment(&single, AugmentationKind::AttributeMasking, 0.2, 0).is_ok());
        for bad in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(augment(&path(4), AugmentationKind::AttributeMasking, bad, 0).is_err());
        }
    }

    #[test]
    fn tiny_ratio_leaves_graph_unchanged() {
        let g = graph(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5)]);
        for kind in ALL_KINDS {
            let (a, b) = view_pair(&g, kind, 1e-6, 9).unwrap();
            assert_eq!(a, g, "{kind}");
            assert_eq!(b, g, "{kind}");
        }
    }

    #[test]
    fn view_pairs_are_deterministic() {
        let g = path(9);
        assert_eq!(sample_view_pair(&g, 0.2, 4).unwrap(), sample_view_pair(&g, 0.2, 4).unwrap());
        for kind in ALL_KINDS {
            assert_eq!(kind.name().parse::<AugmentationKind>().unwrap(), kind);
        }
    }

    proptest! {
        #[test]
        fn outputs_are_valid_graphs(
            n in 2usize..15,
            raw in proptest::collection::vec((0usize..15, 0usize..15), 1..30),
            ratio in 0.01f64..0.99,
            seed in 0u64..1000,
        ) {
            let edges: Vec<(usize, usize)> = raw.into_iter().map(|(u, v)| (u % n, v % n)).collect();
            let g = Graph::from_edges_lossy(n, edges, Matrix::filled(n, 1, 1.0)).unwrap();
            for kind in ALL_KINDS {
                if !kind.applies_to(&g) {
                    continue;
                }
                let out = augment(&g, kind, ratio, seed).unwrap();
                prop_assert!(out.num_nodes() >= 1);
                // Rebuilding through the validating constructor must succeed.
                Graph::new(out.num_nodes(), out.edges().to_vec(), out.features().clone()).unwrap();
                prop_assert_eq!(&out, &augment(&g, kind, ratio, seed).unwrap());
            }
        }
    }
}
