//! Finite-difference checks of the full model: encoder through projection
//! into both contrastive losses, and encoder through classifier into
//! cross-entropy, on random small graph batches.

use std::time::{Duration, Instant};

use c3gnn::autodiff::{grad_check_many, GradCheck, GradCheckReport, Matrix, Tape, TensorId};
use c3gnn::contrastive::{cross_entropy, inter_loss, intra_loss, BatchView};
use c3gnn::encoder::{classify_batch, encode_batch, init_params, project_batch, BoundParams, EncoderDims, GraphBatch};
use c3gnn::graphdata::Graph;
use c3gnn::rng;
use c3gnn::Result;
use rand::Rng;

pub const BATCH_GRAPHS: usize = 8;
pub const MAX_NODES: usize = 12;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Composition {
    Intra,
    Inter,
    CrossEntropy,
}

impl Composition {
    pub fn name(self) -> &'static str {
        match self {
            Composition::Intra => "encode>project>intra",
            Composition::Inter => "encode>project>inter",
            Composition::CrossEntropy => "encode>classify>cross_entropy",
        }
    }
}

pub const COMPOSITIONS: [Composition; 3] = [Composition::Intra, Composition::Inter, Composition::CrossEntropy];

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub composition: Composition,
    pub batch_seed: u64,
    pub report: GradCheckReport,
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub results: Vec<SuiteResult>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.report.passed)
    }

    pub fn max_rel_error(&self, composition: Composition) -> f64 {
        self.results
            .iter()
            .filter(|r| r.composition == composition)
            .map(|r| r.report.max_rel_error)
            .fold(0.0, f64::max)
    }
}

pub fn suite_dims() -> EncoderDims {
    EncoderDims {
        input: 3,
        hidden: 6,
        embed: 5,
        proj: 4,
        classes: 3,
        layers: 2,
    }
}

/// `BATCH_GRAPHS` random graphs of 1 to `MAX_NODES` nodes with positive
/// features, plus `(class, subclass)` labels that leave every loss with
/// anchors to sum over.
pub fn random_batch(seed: u64, feature_dim: usize) -> Result<(Vec<Graph>, Vec<(usize, usize)>)> {
    let mut r = rng::rng(seed);
    let graphs = (0..BATCH_GRAPHS)
        .map(|_| {
            let n = r.gen_range(1..=MAX_NODES);
            let m = r.gen_range(0..=2 * n);
            let edges: Vec<(usize, usize)> = (0..m).map(|_| (r.gen_range(0..n), r.gen_range(0..n))).collect();
            let f = (0..n * feature_dim).map(|_| r.gen_range(0.1..1.0)).collect();
            Graph::from_edges_lossy(n, edges, Matrix::from_vec(n, feature_dim, f)?)
        })
        .collect::<Result<Vec<_>>>()?;
    // Two classes, each with two subclasses of two graphs.
    let labels = (0..BATCH_GRAPHS).map(|i| (i % 2, (i / 2) % 2)).collect();
    Ok((graphs, labels))
}

fn loss_fn<'a>(
    composition: Composition,
    batch: &'a GraphBatch,
    labels: &[(usize, usize)],
    layers: usize,
) -> impl Fn(&mut Tape, &[TensorId]) -> Result<TensorId> + 'a {
    let view = BatchView::all_anchors(labels.to_vec());
    let classes: Vec<usize> = labels.iter().map(|l| l.0).collect();
    move |tape, ids| {
        let p = BoundParams::from_ids(layers, ids.to_vec());
        let h = encode_batch(tape, &p, batch)?;
        match composition {
            Composition::Intra => {
                let z = project_batch(tape, &p, h)?;
                Ok(intra_loss(tape, z, &view, 0.2)?.total)
            }
            Composition::Inter => {
                let z = project_batch(tape, &p, h)?;
                Ok(inter_loss(tape, z, &view, 0.2)?.total)
            }
            Composition::CrossEntropy => {
                let logits = classify_batch(tape, &p, h)?;
                cross_entropy(tape, logits, &classes)
            }
        }
    }
}

/// Check every composition on `batches` random batches derived from `seed`.
pub fn run_suite(seed: u64, batches: usize) -> Result<SuiteReport> {
    let start = Instant::now();
    let dims = suite_dims();
    let mut results = Vec::new();
    for b in 0..batches {
        let batch_seed = rng::derive(seed, &[b as u64]);
        let (graphs, labels) = random_batch(batch_seed, dims.input)?;
        let refs: Vec<&Graph> = graphs.iter().collect();
        let packed = GraphBatch::new(&refs)?;
        let mut params = init_params(&dims, rng::derive(batch_seed, &[1]))?;
        // Small positive biases keep hidden units away from the ReLU kink.
        for t in params.tensors_mut() {
            if t.rows() == 1 {
                t.as_mut_slice().iter_mut().for_each(|v| *v = 0.05);
            }
        }
        let tensors: Vec<Matrix> = params.tensors().into_iter().cloned().collect();
        for composition in COMPOSITIONS {
            let f = loss_fn(composition, &packed, &labels, dims.layers);
            let report = grad_check_many(f, &tensors, GradCheck::with_tol(TOLERANCE))?;
            results.push(SuiteResult {
                composition,
                batch_seed,
                report,
            });
        }
    }
    Ok(SuiteReport {
        results,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_are_in_range_and_labelled_for_both_losses() {
        let (graphs, labels) = random_batch(3, 2).unwrap();
        assert_eq!(graphs.len(), BATCH_GRAPHS);
        assert!(graphs.iter().all(|g| (1..=MAX_NODES).contains(&g.num_nodes())));
        for c in 0..2 {
            let subs: Vec<usize> = labels.iter().filter(|l| l.0 == c).map(|l| l.1).collect();
            assert!(subs.contains(&0) && subs.contains(&1));
        }
    }
}
