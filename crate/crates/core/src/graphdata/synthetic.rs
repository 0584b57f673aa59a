//! Synthetic motif-mixture benchmark.
//!
//! Four classes (cycles, stars, grids, trees), each with two structural
//! variants. A graph is a small random backbone tree with several motifs
//! hung off it; every motif slot holds the graph's own class/variant motif
//! unless, with probability `noise_motif_prob`, it is swapped for a motif of
//! another class. Node features are a one-hot encoding of degree, capped.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{make_imbalanced, Dataset, Graph, LabeledGraph};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::rng;

pub const NUM_CLASSES: usize = 4;
pub const VARIANTS_PER_CLASS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub motifs_per_graph: usize,
    pub backbone_min: usize,
    pub backbone_max: usize,
    pub noise_motif_prob: f64,
    pub extra_edges: usize,
    pub degree_cap: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            motifs_per_graph: 2,
            backbone_min: 3,
            backbone_max: 6,
            noise_motif_prob: 0.3,
            extra_edges: 1,
            degree_cap: 6,
        }
    }
}

impl SyntheticConfig {
    pub fn feature_dim(&self) -> usize {
        self.degree_cap + 1
    }
}

/// Edge list and node count of the motif for `(class, variant)`.
pub fn motif(class: usize, variant: usize) -> (usize, Vec<(usize, usize)>) {
    match (class, variant) {
        // five-cycle
        (0, 0) => (5, (0..5).map(|i| (i, (i + 1) % 5)).collect()),
        // bowtie: two triangles sharing node 0
        (0, _) => (5, vec![(0, 1), (1, 2), (2, 0), (0, 3), (3, 4), (4, 0)]),
        // star with four leaves
        (1, 0) => (5, (1..5).map(|i| (0, i)).collect()),
        // spider: three legs of length two
        (1, _) => (7, vec![(0, 1), (1, 2), (0, 3), (3, 4), (0, 5), (5, 6)]),
        // 2×3 ladder
        (2, 0) => (6, vec![(0, 1), (1, 2), (3, 4), (4, 5), (0, 3), (1, 4), (2, 5)]),
        // 3×3 grid
        (2, _) => {
            let mut e = Vec::new();
            for r in 0..3 {
                for c in 0..3 {
                    let v = r * 3 + c;
                    if c < 2 {
                        e.push((v, v + 1));
                    }
                    if r < 2 {
                        e.push((v, v + 3));
                    }
                }
            }
            (9, e)
        }
        // complete binary tree of depth two
        (3, 0) => (7, vec![(0, 1), (0, 2), (1, 3), (1, 4), (2, 5), (2, 6)]),
        // caterpillar: path of four, one pendant each
        _ => (8, vec![(0, 1), (1, 2), (2, 3), (0, 4), (1, 5), (2, 6), (3, 7)]),
    }
}

fn degree_features(num_nodes: usize, edges: &[(usize, usize)], cap: usize) -> Matrix {
    let mut deg = vec![0usize; num_nodes];
    for &(u, v) in edges {
        deg[u] += 1;
        deg[v] += 1;
    }
    let mut f = Matrix::zeros(num_nodes, cap + 1);
    for (i, d) in deg.into_iter().enumerate() {
        f[(i, d.min(cap))] = 1.0;
    }
    f
}

/// One graph of `class` drawn with the given variant.
pub fn generate_graph(cfg: &SyntheticConfig, class: usize, variant: usize, rng: &mut rng::Rng) -> Result<Graph> {
    if class >= NUM_CLASSES || variant >= VARIANTS_PER_CLASS {
        return Err(Error::InvalidArgument(format!("no motif ({class}, {variant})")));
    }
    if cfg.backbone_min == 0 || cfg.backbone_min > cfg.backbone_max {
        return Err(Error::InvalidArgument("bad backbone size range".into()));
    }
    let b = rng.gen_range(cfg.backbone_min..=cfg.backbone_max);
    let mut edges: Vec<(usize, usize)> = (1..b).map(|v| (rng.gen_range(0..v), v)).collect();
    let mut n = b;
    for _ in 0..cfg.motifs_per_graph {
        let (mc, mv) = if rng.gen_bool(cfg.noise_motif_prob.clamp(0.0, 1.0)) {
            let other = (class + rng.gen_range(1..NUM_CLASSES)) % NUM_CLASSES;
            (other, rng.gen_range(0..VARIANTS_PER_CLASS))
        } else {
            (class, variant)
        };
        let (m, medges) = motif(mc, mv);
        edges.extend(medges.iter().map(|&(u, v)| (u + n, v + n)));
        edges.push((rng.gen_range(0..b), n + rng.gen_range(0..m)));
        n += m;
    }
    for _ in 0..cfg.extra_edges {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        edges.push((u, v));
    }
    // Shuffle node ids so that position carries no signal.
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let edges: Vec<(usize, usize)> = edges.into_iter().map(|(u, v)| (perm[u], perm[v])).collect();
    let mut norm: Vec<(usize, usize)> = edges
        .into_iter()
        .filter(|(u, v)| u != v)
        .map(|(u, v)| (u.min(v), u.max(v)))
        .collect();
    norm.sort_unstable();
    norm.dedup();
    let feats = degree_features(n, &norm, cfg.degree_cap);
    Graph::new(n, norm, feats)
}

/// `per_class[c]` graphs of each class, variants drawn uniformly. Returns the
/// dataset and the variant of every graph.
pub fn generate(cfg: &SyntheticConfig, per_class: &[usize], seed: u64) -> Result<(Dataset, Vec<usize>)> {
    if per_class.len() != NUM_CLASSES {
        return Err(Error::InvalidArgument(format!(
            "synthetic benchmark has {NUM_CLASSES} classes"
        )));
    }
    let mut graphs = Vec::new();
    let mut variants = Vec::new();
    for (class, &count) in per_class.iter().enumerate() {
        for i in 0..count {
            let mut r = rng::child(seed, &[0x5e, class as u64, i as u64]);
            let variant = r.gen_range(0..VARIANTS_PER_CLASS);
            graphs.push(LabeledGraph {
                graph: generate_graph(cfg, class, variant, &mut r)?,
                label: class,
            });
            variants.push(variant);
        }
    }
    Ok((Dataset::new(graphs, NUM_CLASSES, cfg.feature_dim())?, variants))
}

/// Benchmark splits.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

#[derive(Clone, Debug)]
pub struct BenchmarkSpec {
    pub graphs: SyntheticConfig,
    /// Rank-1 class size before imbalance is imposed.
    pub head_size: usize,
    pub imbalance_factor: f64,
    pub val_per_class: usize,
    pub test_per_class: usize,
}

impl Default for BenchmarkSpec {
    /// Head class of 127 at IF = 10 gives class sizes (127, 40, 20, 13):
    /// 200 training graphs.
    fn default() -> Self {
        BenchmarkSpec {
            graphs: SyntheticConfig::default(),
            head_size: 127,
            imbalance_factor: 10.0,
            val_per_class: 40,
            test_per_class: 40,
        }
    }
}

/// Balanced pools per split, then the train pool is made imbalanced.
pub fn benchmark(spec: &BenchmarkSpec, seed: u64) -> Result<Benchmark> {
    let (train, _) = generate(&spec.graphs, &[spec.head_size; NUM_CLASSES], rng::derive(seed, &[1]))?;
    let (val, _) = generate(&spec.graphs, &[spec.val_per_class; NUM_CLASSES], rng::derive(seed, &[2]))?;
    let (test, _) = generate(&spec.graphs, &[spec.test_per_class; NUM_CLASSES], rng::derive(seed, &[3]))?;
    let train = make_imbalanced(&train, spec.imbalance_factor, rng::derive(seed, &[4]))?;
    Ok(Benchmark { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn motifs_are_valid_simple_graphs() {
        for c in 0..NUM_CLASSES {
            for v in 0..VARIANTS_PER_CLASS {
                let (n, e) = motif(c, v);
                Graph::new(n, e, Matrix::zeros(n, 1)).unwrap();
            }
        }
    }

    #[test]
    fn default_benchmark_shape() {
        let b = benchmark(&BenchmarkSpec::default(), 7).unwrap();
        assert_eq!(b.train.class_counts(), vec![127, 40, 20, 13]);
        assert_eq!(b.train.len(), 200);
        assert_eq!(b.val.class_counts(), vec![40; 4]);
        assert_eq!(b.test.class_counts(), vec![40; 4]);
        let again = benchmark(&BenchmarkSpec::default(), 7).unwrap();
        assert_eq!(again.train, b.train);
    }

    #[test]
    fn features_are_one_hot_degrees() {
        let cfg = SyntheticConfig::default();
        let mut r = rng::rng(3);
        let g = generate_graph(&cfg, 2, 1, &mut r).unwrap();
        let deg = g.degrees();
        for (i, d) in deg.iter().enumerate() {
            let row = g.features().row(i);
            assert_eq!(row.iter().sum::<f64>(), 1.0);
            assert_eq!(row[(*d).min(cfg.degree_cap)], 1.0);
        }
    }
}
