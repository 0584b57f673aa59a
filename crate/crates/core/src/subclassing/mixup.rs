//! Convex interpolation of same-subclass embeddings.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Matrix, SparseRows, Tape, TensorId};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MixupSample {
    pub embedding: Vec<f64>,
    pub class: usize,
    pub subclass: usize,
    pub alpha: f64,
}

/// `alpha·z_i + (1 − alpha)·z_j`, labeled like its parents.
pub fn mixup_interpolate(
    z_i: &[f64],
    z_j: &[f64],
    label_i: (usize, usize),
    label_j: (usize, usize),
    alpha: f64,
) -> Result<MixupSample> {
    if z_i.len() != z_j.len() {
        return Err(Error::ShapeMismatch {
            op: "mixup",
            lhs: (1, z_i.len()),
            rhs: (1, z_j.len()),
        });
    }
    if label_i != label_j {
        return Err(Error::InvalidArgument(format!(
            "mixup parents differ in subclass: {label_i:?} vs {label_j:?}"
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("mixing ratio {alpha} outside [0, 1]")));
    }
    let embedding = if alpha == 1.0 {
        z_i.to_vec()
    } else if alpha == 0.0 {
        z_j.to_vec()
    } else {
        z_i.iter().zip(z_j).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect()
    };
    Ok(MixupSample {
        embedding,
        class: label_i.0,
        subclass: label_i.1,
        alpha,
    })
}

/// Parents and ratio of one synthetic sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixPlan {
    pub first: usize,
    pub second: usize,
    pub alpha: f64,
    pub label: (usize, usize),
}

/// One plan per subclass that has members from at least two distinct
/// sources among the rows; `sources[r]` identifies the graph row `r` was
/// derived from, so both parents never come from the same graph. Subclasses
/// are visited in ascending `(class, subclass)` order.
pub fn plan_mixup(labels: &[(usize, usize)], sources: &[usize], rng: &mut impl Rng) -> Result<Vec<MixPlan>> {
    if labels.len() != sources.len() {
        return Err(Error::InvalidArgument("one source id per row required".into()));
    }
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (r, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(r);
    }
    let mut plans = Vec::new();
    for (label, rows) in groups {
        let mut distinct: Vec<usize> = rows.iter().map(|&r| sources[r]).collect();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            continue;
        }
        let first = rows[rng.gen_range(0..rows.len())];
        let others: Vec<usize> = rows.iter().copied().filter(|&r| sources[r] != sources[first]).collect();
        let second = others[rng.gen_range(0..others.len())];
        plans.push(MixPlan {
            first,
            second,
            alpha: rng.gen_range(0.0..=1.0),
            label,
        });
    }
    Ok(plans)
}

/// Synthetic samples for a batch of embeddings (one row each, every row its
/// own source), re-normalized to unit length.
pub fn synthesize_batch_samples(
    embeddings: &Matrix,
    labels: &[(usize, usize)],
    rng: &mut impl Rng,
) -> Result<Vec<MixupSample>> {
    if embeddings.rows() != labels.len() {
        return Err(Error::InvalidArgument("one label per embedding required".into()));
    }
    let sources: Vec<usize> = (0..labels.len()).collect();
    plan_mixup(labels, &sources, rng)?
        .into_iter()
        .map(|p| {
            let mut s = mixup_interpolate(
                embeddings.row(p.first),
                embeddings.row(p.second),
                p.label,
                p.label,
                p.alpha,
            )?;
            let norm = s.embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < crate::autodiff::NORM_EPS {
                return Err(Error::NonFinite("mixup of opposite embeddings"));
            }
            s.embedding.iter_mut().for_each(|v| *v /= norm);
            Ok(s)
        })
        .collect()
}

/// Differentiable mixup rows of `z` following `plans`, re-normalized.
/// Gradients reach both parents.
pub fn mixup_rows(tape: &mut Tape, z: TensorId, plans: &[MixPlan]) -> Result<TensorId> {
    let rows = tape.value(z).rows();
    let map = SparseRows::new(
        rows,
        plans
            .iter()
            .map(|p| vec![(p.first, p.alpha), (p.second, 1.0 - p.alpha)])
            .collect(),
    )?;
    let mixed = tape.sparse_rows(Arc::new(map), z)?;
    tape.row_l2_normalize(mixed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheck};
    use crate::rng;

    #[test]
    fn interpolation_examples() {
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        assert_eq!(mixup_interpolate(&a, &b, (0, 1), (0, 1), 1.0).unwrap().embedding, a);
        assert_eq!(mixup_interpolate(&a, &b, (0, 1), (0, 1), 0.0).unwrap().embedding, b);
        let m = mixup_interpolate(&a, &b, (2, 1), (2, 1), 0.3).unwrap();
        assert_eq!(m.embedding, vec![0.3, 0.7]);
        assert_eq!((m.class, m.subclass), (2, 1));
        assert!(mixup_interpolate(&a, &b, (0, 1), (0, 0), 0.3).is_err());
        assert!(mixup_interpolate(&a, &b[..1], (0, 1), (0, 1), 0.3).is_err());
        assert!(mixup_interpolate(&a, &b, (0, 1), (0, 1), 1.5).is_err());
    }

    #[test]
    fn mix_lies_on_segment() {
        let mut r = rng::rng(0);
        for _ in 0..50 {
            let a: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
            let m = mixup_interpolate(&a, &b, (0, 0), (0, 0), r.gen_range(0.0..=1.0)).unwrap();
            let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            assert!((d(&m.embedding, &a) + d(&m.embedding, &b) - d(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_counts() {
        let mut r = rng::rng(1);
        let z = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]]);
        let out = synthesize_batch_samples(&z, &[(0, 0), (0, 0), (1, 0)], &mut r).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].class, out[0].subclass), (0, 0));
        let norm: f64 = out[0].embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);

        let singles = synthesize_batch_samples(&z, &[(0, 0), (0, 1), (1, 0)], &mut r).unwrap();
        assert!(singles.is_empty());

        for seed in 0..50u64 {
            let mut r = rng::rng(seed);
            let n = r.gen_range(1..30);
            let labels: Vec<(usize, usize)> = (0..n).map(|_| (r.gen_range(0..3), r.gen_range(0..3))).collect();
            let mut counts = std::collections::HashMap::new();
            for l in &labels {
                *counts.entry(*l).or_insert(0) += 1;
            }
            let expected = counts.values().filter(|&&c| c >= 2).count();
            let sources: Vec<usize> = (0..n).collect();
            assert_eq!(plan_mixup(&labels, &sources, &mut r).unwrap().len(), expected);
        }
    }

    #[test]
    fn parents_come_from_distinct_sources() {
        // Two views each of graphs 0 and 1, all one subclass, plus a lone graph.
        let labels = [(0, 0), (0, 0), (0, 0), (0, 0), (1, 0), (1, 0)];
        let sources = [0, 0, 1, 1, 2, 2];
        for seed in 0..40 {
            let plans = plan_mixup(&labels, &sources, &mut rng::rng(seed)).unwrap();
            assert_eq!(plans.len(), 1);
            assert_ne!(sources[plans[0].first], sources[plans[0].second]);
        }
    }

    #[test]
    fn tape_mixup_matches_direct_and_has_gradients() {
        let z = Matrix::from_rows(&[[0.6, 0.8], [1.0, 0.0], [0.0, -1.0]]);
        let plans = vec![MixPlan {
            first: 0,
            second: 2,
            alpha: 0.25,
            label: (0, 0),
        }];
        let mut t = Tape::new();
        let id = t.constant(z.clone());
        let m = mixup_rows(&mut t, id, &plans).unwrap();
        let direct = mixup_interpolate(z.row(0), z.row(2), (0, 0), (0, 0), 0.25).unwrap().embedding;
        let n = direct.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (a, b) in t.value(m).row(0).iter().zip(&direct) {
            assert!((a - b / n).abs() < 1e-15);
        }
        let report = grad_check(
            |t, x| {
                let m = mixup_rows(t, x, &plans)?;
                let w = t.constant(Matrix::from_rows(&[[0.3, -0.7]]));
                let p = t.mul(m, w)?;
                t.sum(p)
            },
            &z,
            GradCheck::default(),
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }
}
