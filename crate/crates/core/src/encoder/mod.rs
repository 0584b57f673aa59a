//! GraphSAGE-style encoder with mean neighbor aggregation and mean readout,
//! plus the projection head (contrastive space) and the classifier head.
//!
//! Per layer: `h_v ← ReLU(h_v W_self + mean_{u∈N(v)} h_u W_neigh + b)`;
//! isolated nodes get a zero neighbor term. The graph embedding `h_G` is the
//! mean of the last layer's node states.

mod checkpoint;

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use crate::autodiff::{Matrix, SparseRows, Tape, TensorId};
use crate::error::{Error, Result};
use crate::graphdata::{Dataset, Graph};
use crate::rng;

/// Layer widths. `embed` is the readout dimension D, `proj` the contrastive
/// dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderDims {
    pub input: usize,
    pub hidden: usize,
    pub embed: usize,
    pub proj: usize,
    pub classes: usize,
    pub layers: usize,
}

impl EncoderDims {
    pub fn new(input: usize, classes: usize) -> Self {
        EncoderDims {
            input,
            hidden: 64,
            embed: 64,
            proj: 32,
            classes,
            layers: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.input, self.hidden, self.embed, self.proj, self.classes, self.layers];
        if all.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each message-passing layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|l| {
                let i = if l == 0 { self.input } else { self.hidden };
                let o = if l + 1 == self.layers { self.embed } else { self.hidden };
                (i, o)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SageLayer {
    pub w_self: Matrix,
    pub w_neigh: Matrix,
    pub bias: Matrix,
}

/// Two-layer perceptron `ReLU(x W1 + b1) W2 + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<SageLayer>,
    pub projection: Mlp,
    pub classifier: Mlp,
}

fn glorot(fan_in: usize, fan_out: usize, r: &mut rng::Rng) -> Matrix {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| r.gen_range(-a..a)).collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("shape")
}

fn mlp(i: usize, h: usize, o: usize, r: &mut rng::Rng) -> Mlp {
    Mlp {
        w1: glorot(i, h, r),
        b1: Matrix::zeros(1, h),
        w2: glorot(h, o, r),
        b2: Matrix::zeros(1, o),
    }
}

/// Glorot-uniform weights, zero biases; deterministic per seed.
pub fn init_params(dims: &EncoderDims, seed: u64) -> Result<EncoderParams> {
    dims.validate()?;
    let mut r = rng::child(seed, &[0x1417]);
    let layers = dims
        .layer_shapes()
        .into_iter()
        .map(|(i, o)| SageLayer {
            w_self: glorot(i, o, &mut r),
            w_neigh: glorot(i, o, &mut r),
            bias: Matrix::zeros(1, o),
        })
        .collect();
    let projection = mlp(dims.embed, dims.embed, dims.proj, &mut r);
    let classifier = mlp(dims.embed, dims.embed, dims.classes, &mut r);
    Ok(EncoderParams {
        layers,
        projection,
        classifier,
    })
}

impl EncoderParams {
    pub fn dims(&self) -> EncoderDims {
        let first = &self.layers[0];
        EncoderDims {
            input: first.w_self.rows(),
            hidden: if self.layers.len() > 1 { first.w_self.cols() } else { self.projection.w1.rows() },
            embed: self.projection.w1.rows(),
            proj: self.projection.w2.cols(),
            classes: self.classifier.w2.cols(),
            layers: self.layers.len(),
        }
    }

    /// Every array with its checkpoint name, in canonical order.
    pub fn named(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("sage.{l}.w_self"), &layer.w_self));
            out.push((format!("sage.{l}.w_neigh"), &layer.w_neigh));
            out.push((format!("sage.{l}.bias"), &layer.bias));
        }
        for (prefix, m) in [("proj", &self.projection), ("cls", &self.classifier)] {
            out.push((format!("{prefix}.w1"), &m.w1));
            out.push((format!("{prefix}.b1"), &m.b1));
            out.push((format!("{prefix}.w2"), &m.w2));
            out.push((format!("{prefix}.b2"), &m.b2));
        }
        out
    }

    /// Mutable arrays in the same order as [`EncoderParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.w_self);
            out.push(&mut layer.w_neigh);
            out.push(&mut layer.bias);
        }
        for m in [&mut self.projection, &mut self.classifier] {
            out.push(&mut m.w1);
            out.push(&mut m.b1);
            out.push(&mut m.w2);
            out.push(&mut m.b2);
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        self.named().into_iter().map(|(_, m)| m).collect()
    }

    pub fn num_tensors(&self) -> usize {
        3 * self.layers.len() + 8
    }

    /// Rebuild from arrays in canonical order, checking the shape chain.
    pub fn from_tensors(layers: usize, tensors: Vec<Matrix>) -> Result<Self> {
        if layers == 0 || tensors.len() != 3 * layers + 8 {
            return Err(Error::InvalidArgument(format!(
                "{} arrays do not describe a {layers}-layer encoder",
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let mut sage = Vec::with_capacity(layers);
        for _ in 0..layers {
            sage.push(SageLayer {
                w_self: next(),
                w_neigh: next(),
                bias: next(),
            });
        }
        let mut take_mlp = || Mlp {
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        };
        let projection = take_mlp();
        let classifier = take_mlp();
        let params = EncoderParams {
            layers: sage,
            projection,
            classifier,
        };
        params.check_shapes()?;
        Ok(params)
    }

    fn check_shapes(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("inconsistent encoder shapes: {what}")));
        let mut width = self.layers[0].w_self.rows();
        for (l, layer) in self.layers.iter().enumerate() {
            let out = layer.w_self.cols();
            if layer.w_self.rows() != width
                || layer.w_neigh.shape() != layer.w_self.shape()
                || layer.bias.shape() != (1, out)
                || out == 0
                || width == 0
            {
                return bad(&format!("layer {l}"));
            }
            width = out;
        }
        for (name, m) in [("projection", &self.projection), ("classifier", &self.classifier)] {
            let (h, o) = (m.w1.cols(), m.w2.cols());
            if m.w1.rows() != width || m.b1.shape() != (1, h) || m.w2.rows() != h || m.b2.shape() != (1, o) || h == 0 || o == 0 {
                return bad(name);
            }
        }
        Ok(())
    }

    /// Register every array on `tape`, trainable or constant.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let ids: Vec<TensorId> = self
            .tensors()
            .into_iter()
            .map(|m| if trainable { tape.param(m.clone()) } else { tape.constant(m.clone()) })
            .collect();
        BoundParams {
            layers: self.layers.len(),
            ids,
        }
    }
}

/// Tape handles for an [`EncoderParams`], canonical order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    layers: usize,
    ids: Vec<TensorId>,
}

impl BoundParams {
    /// Wrap handles already on a tape, in canonical order (see
    /// [`EncoderParams::named`]).
    pub fn from_ids(layers: usize, ids: Vec<TensorId>) -> Self {
        BoundParams { layers, ids }
    }

    pub fn ids(&self) -> &[TensorId] {
        &self.ids
    }

    fn layer(&self, l: usize) -> (TensorId, TensorId, TensorId) {
        (self.ids[3 * l], self.ids[3 * l + 1], self.ids[3 * l + 2])
    }

    fn head(&self, which: usize) -> [TensorId; 4] {
        let base = 3 * self.layers + 4 * which;
        [self.ids[base], self.ids[base + 1], self.ids[base + 2], self.ids[base + 3]]
    }

    /// Gradients after `tape.backward`, canonical order; zeros where a
    /// parameter was not reached.
    pub fn gradients(&self, tape: &Tape) -> Vec<Matrix> {
        self.ids
            .iter()
            .map(|&id| {
                tape.grad(id).cloned().unwrap_or_else(|| {
                    let (r, c) = tape.value(id).shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect()
    }
}

/// Several graphs packed for one forward pass: stacked node features, the
/// neighbor-mean operator and the per-graph readout operator.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    features: Matrix,
    neighbor_mean: Arc<SparseRows>,
    readout: Arc<SparseRows>,
    graphs: usize,
}

impl GraphBatch {
    pub fn new(graphs: &[&Graph]) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty graph batch".into()))?;
        let d = first.feature_dim();
        let total: usize = graphs.iter().map(|g| g.num_nodes()).sum();
        let mut data = Vec::with_capacity(total * d);
        let mut neighbors = Vec::with_capacity(total);
        let mut members = Vec::with_capacity(graphs.len());
        let mut offset = 0;
        for g in graphs {
            if g.feature_dim() != d {
                return Err(Error::ShapeMismatch {
                    op: "graph batch",
                    lhs: (0, d),
                    rhs: (0, g.feature_dim()),
                });
            }
            data.extend_from_slice(g.features().as_slice());
            for list in g.neighbors() {
                neighbors.push(list.into_iter().map(|u| u + offset).collect());
            }
            members.push((offset..offset + g.num_nodes()).collect());
            offset += g.num_nodes();
        }
        Ok(GraphBatch {
            features: Matrix::from_vec(total, d, data)?,
            neighbor_mean: Arc::new(SparseRows::means(total, &neighbors)?),
            readout: Arc::new(SparseRows::means(total, &members)?),
            graphs: graphs.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.graphs
    }

    pub fn is_empty(&self) -> bool {
        self.graphs == 0
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }
}

fn dense(tape: &mut Tape, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
    let xw = tape.matmul(x, w)?;
    tape.add(xw, b)
}

/// Graph embeddings `h_G`, one row per graph of the batch.
pub fn encode_batch(tape: &mut Tape, p: &BoundParams, batch: &GraphBatch) -> Result<TensorId> {
    let expected = tape.value(p.layer(0).0).rows();
    if batch.features.cols() != expected {
        return Err(Error::ShapeMismatch {
            op: "encode",
            lhs: batch.features.shape(),
            rhs: tape.value(p.layer(0).0).shape(),
        });
    }
    let mut h = tape.constant(batch.features.clone());
    for l in 0..p.layers {
        let (w_self, w_neigh, bias) = p.layer(l);
        let own = tape.matmul(h, w_self)?;
        let agg = tape.sparse_rows(batch.neighbor_mean.clone(), h)?;
        let nbr = tape.matmul(agg, w_neigh)?;
        let pre = tape.add(own, nbr)?;
        let pre = tape.add(pre, bias)?;
        h = tape.relu(pre)?;
    }
    tape.sparse_rows(batch.readout.clone(), h)
}

fn mlp_forward(tape: &mut Tape, head: [TensorId; 4], x: TensorId) -> Result<TensorId> {
    let [w1, b1, w2, b2] = head;
    let hidden = dense(tape, x, w1, b1)?;
    let hidden = tape.relu(hidden)?;
    dense(tape, hidden, w2, b2)
}

/// Unit-norm contrastive embeddings `z` from `h_G` rows.
pub fn project_batch(tape: &mut Tape, p: &BoundParams, h: TensorId) -> Result<TensorId> {
    let out = mlp_forward(tape, p.head(0), h)?;
    tape.row_l2_normalize(out)
}

/// Class logits from `h_G` rows.
pub fn classify_batch(tape: &mut Tape, p: &BoundParams, h: TensorId) -> Result<TensorId> {
    mlp_forward(tape, p.head(1), h)
}

/// `h_G` of a single graph.
pub fn encode(params: &EncoderParams, graph: &Graph) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let batch = GraphBatch::new(&[graph])?;
    let h = encode_batch(&mut tape, &p, &batch)?;
    Ok(tape.value(h).row(0).to_vec())
}

fn head_single(params: &EncoderParams, h: &[f64], which: usize) -> Result<Vec<f64>> {
    let expected = params.projection.w1.rows();
    if h.len() != expected {
        return Err(Error::ShapeMismatch {
            op: if which == 0 { "project" } else { "classify" },
            lhs: (1, h.len()),
            rhs: (expected, 0),
        });
    }
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let x = tape.constant(Matrix::row_vector(h));
    let out = if which == 0 {
        project_batch(&mut tape, &p, x)?
    } else {
        classify_batch(&mut tape, &p, x)?
    };
    Ok(tape.value(out).row(0).to_vec())
}

/// Unit-norm projection of one graph embedding.
pub fn project(params: &EncoderParams, h: &[f64]) -> Result<Vec<f64>> {
    head_single(params, h, 0)
}

/// Logits of one graph embedding.
pub fn classify(params: &EncoderParams, h: &[f64]) -> Result<Vec<f64>> {
    head_single(params, h, 1)
}

const CHUNK: usize = 64;

/// `h_G` for every graph of a dataset (rows in dataset order). Chunks are
/// encoded in parallel; each row depends only on its own graph, so the
/// result does not depend on the thread count.
pub fn embed_dataset(params: &EncoderParams, dataset: &Dataset) -> Result<Matrix> {
    let graphs: Vec<&Graph> = dataset.graphs().iter().map(|g| &g.graph).collect();
    embed_graphs(params, &graphs)
}

pub fn embed_graphs(params: &EncoderParams, graphs: &[&Graph]) -> Result<Matrix> {
    let d = params.projection.w1.rows();
    let chunks: Vec<Vec<f64>> = graphs
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut tape = Tape::new();
            let p = params.bind(&mut tape, false);
            let batch = GraphBatch::new(chunk)?;
            let h = encode_batch(&mut tape, &p, &batch)?;
            Ok(tape.value(h).as_slice().to_vec())
        })
        .collect::<Result<_>>()?;
    Matrix::from_vec(graphs.len(), d, chunks.concat())
}

/// Argmax class per graph.
pub fn predict(params: &EncoderParams, dataset: &Dataset) -> Result<Vec<usize>> {
    let h = embed_dataset(params, dataset)?;
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let x = tape.constant(h);
    let logits = classify_batch(&mut tape, &p, x)?;
    let l = tape.value(logits);
    Ok((0..l.rows()).map(|r| argmax(l.row(r))).collect())
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
