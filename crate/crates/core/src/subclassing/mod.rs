//! Splitting large classes into capped subclasses, periodic refresh of the
//! split, and same-subclass mixup.

mod kmeans;
mod mixup;

use std::fmt::Write as _;
use std::sync::Arc;

pub use kmeans::{capped_assign, capped_kmeans, sse, Clustering, MAX_ROUNDS};
pub use mixup::{mixup_interpolate, mixup_rows, plan_mixup, synthesize_batch_samples, MixPlan, MixupSample};

use crate::autodiff::Matrix;
use crate::encoder::{embed_dataset, EncoderParams};
use crate::error::{Error, Result};
use crate::graphdata::Dataset;
use crate::rng;

/// Largest allowed subclass: `max(smallest class count, delta)`.
pub fn subclass_cap(smallest_class: usize, delta: usize) -> Result<usize> {
    if smallest_class == 0 || delta == 0 {
        return Err(Error::InvalidArgument("subclass cap inputs must be positive".into()));
    }
    Ok(smallest_class.max(delta))
}

/// Subclass labels of one class and the subclass centers (one row each).
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub labels: Vec<usize>,
    pub centers: Matrix,
}

impl Partition {
    pub fn num_subclasses(&self) -> usize {
        self.centers.rows()
    }
}

fn mean_row(points: &Matrix) -> Matrix {
    let mut c = Matrix::zeros(1, points.cols());
    for r in 0..points.rows() {
        for (o, x) in c.row_mut(0).iter_mut().zip(points.row(r)) {
            *o += x;
        }
    }
    c.scale_assign(1.0 / points.rows() as f64);
    c
}

/// One subclass when the class fits under `cap`; otherwise capped k-means
/// with `ceil(N/cap)` clusters.
pub fn partition_class(points: &Matrix, cap: usize, seed: u64) -> Result<Partition> {
    let n = points.rows();
    if n == 0 || cap == 0 {
        return Err(Error::InvalidArgument("partition needs points and a positive cap".into()));
    }
    if n <= cap {
        return Ok(Partition {
            labels: vec![0; n],
            centers: mean_row(points),
        });
    }
    let c = capped_kmeans(points, n.div_ceil(cap), cap, seed)?;
    Ok(Partition {
        labels: c.labels,
        centers: c.centers,
    })
}

/// `(class, subclass)` of every training graph plus per-class centers.
#[derive(Clone, Debug, PartialEq)]
pub struct SubclassAssignment {
    pub omega: Vec<(usize, usize)>,
    pub centers: Vec<Matrix>,
    pub cap: usize,
    pub epoch_stamp: usize,
}

impl SubclassAssignment {
    /// Every class a single subclass; the shape used before any clustering.
    pub fn trivial(labels: &[usize], num_classes: usize, dim: usize) -> Self {
        SubclassAssignment {
            omega: labels.iter().map(|&c| (c, 0)).collect(),
            centers: vec![Matrix::zeros(1, dim); num_classes],
            cap: usize::MAX,
            epoch_stamp: 0,
        }
    }

    pub fn num_subclasses(&self, class: usize) -> usize {
        self.centers[class].rows()
    }

    pub fn subclass_sizes(&self) -> Vec<Vec<usize>> {
        let mut s: Vec<Vec<usize>> = self.centers.iter().map(|c| vec![0; c.rows()]).collect();
        for &(c, k) in &self.omega {
            s[c][k] += 1;
        }
        s
    }

    /// Classes holding more than one subclass.
    pub fn split_classes(&self) -> Vec<usize> {
        (0..self.centers.len()).filter(|&c| self.num_subclasses(c) > 1).collect()
    }

    /// Subclass whose center is nearest to `h` within `class`.
    pub fn nearest_subclass(&self, class: usize, h: &[f64]) -> usize {
        let centers = &self.centers[class];
        (0..centers.rows())
            .min_by(|&a, &b| {
                kmeans::sq_dist(centers.row(a), h)
                    .total_cmp(&kmeans::sq_dist(centers.row(b), h))
                    .then(a.cmp(&b))
            })
            .unwrap_or(0)
    }

    /// Tab-separated `graph_id, class, subclass` with a header line.
    pub fn to_table(&self) -> String {
        let mut out = String::from("graph_id\tclass\tsubclass\n");
        for (i, (c, s)) in self.omega.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{c}\t{s}");
        }
        out
    }
}

/// Partition every class of `labels` from the embedding rows `h`.
pub fn assign_subclasses(
    h: &Matrix,
    labels: &[usize],
    num_classes: usize,
    cap: usize,
    epoch: usize,
    seed: u64,
) -> Result<SubclassAssignment> {
    if h.rows() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} embeddings for {} labels",
            h.rows(),
            labels.len()
        )));
    }
    let mut members = vec![Vec::new(); num_classes];
    for (i, &c) in labels.iter().enumerate() {
        members
            .get_mut(c)
            .ok_or_else(|| Error::InvalidArgument(format!("label {c} outside {num_classes} classes")))?
            .push(i);
    }
    let mut omega = vec![(0, 0); labels.len()];
    let mut centers = Vec::with_capacity(num_classes);
    for (c, idx) in members.iter().enumerate() {
        if idx.is_empty() {
            return Err(Error::InvalidArgument(format!("class {c} has no training graphs")));
        }
        let mut data = Vec::with_capacity(idx.len() * h.cols());
        for &i in idx {
            data.extend_from_slice(h.row(i));
        }
        let points = Matrix::from_vec(idx.len(), h.cols(), data)?;
        let part = partition_class(&points, cap, rng::derive(seed, &[0xc1a55, c as u64, epoch as u64]))?;
        for (&i, &s) in idx.iter().zip(&part.labels) {
            omega[i] = (c, s);
        }
        centers.push(part.centers);
    }
    Ok(SubclassAssignment {
        omega,
        centers,
        cap,
        epoch_stamp: epoch,
    })
}

/// Recluster from fresh graph embeddings when `epoch` is a multiple of
/// `interval`; otherwise hand back `prev` itself.
pub fn refresh_assignments(
    params: &EncoderParams,
    train: &Dataset,
    cap: usize,
    epoch: usize,
    interval: usize,
    prev: &Arc<SubclassAssignment>,
    seed: u64,
) -> Result<Arc<SubclassAssignment>> {
    if interval == 0 {
        return Err(Error::InvalidArgument("refresh interval must be positive".into()));
    }
    if epoch % interval != 0 {
        return Ok(Arc::clone(prev));
    }
    let h = embed_dataset(params, train)?;
    Ok(Arc::new(assign_subclasses(&h, &train.labels(), train.num_classes(), cap, epoch, seed)?))
}
