//! Hierarchical supervised contrastive objective and the cross-entropy term.
//!
//! For an anchor `i` of a batch of unit embeddings:
//! `A(i)` is every other element, `P(i)` the members of `A(i)` sharing the
//! class of `i`, `Q(i)` those sharing its subclass.
//!
//! * intra: `−1/|Q| Σ_{q∈Q} log softmax_{A}(z_i·z_q / τ)`
//! * inter: `−1/|P\Q| Σ_{p∈P\Q} log softmax_{A\Q}(z_i·z_p / τ)`
//!
//! Each loss sums over anchors with a nonempty positive set; anchors without
//! one are left out. Synthetic (mixup) rows take part in every set but are
//! never anchors.

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};

/// Labels of the rows of a contrastive batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchView {
    /// `(class, subclass)` per row; subclass ids are local to their class.
    pub labels: Vec<(usize, usize)>,
    pub anchor: Vec<bool>,
}

impl BatchView {
    pub fn new(labels: Vec<(usize, usize)>, anchor: Vec<bool>) -> Result<Self> {
        if labels.len() != anchor.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels but {} anchor flags",
                labels.len(),
                anchor.len()
            )));
        }
        Ok(BatchView { labels, anchor })
    }

    /// Every row is an anchor.
    pub fn all_anchors(labels: Vec<(usize, usize)>) -> Self {
        let anchor = vec![true; labels.len()];
        BatchView { labels, anchor }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// `A(i)`, `P(i)`, `Q(i)` in ascending index order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexSets {
    pub all: Vec<usize>,
    pub same_class: Vec<usize>,
    pub same_subclass: Vec<usize>,
}

pub fn index_sets(view: &BatchView, i: usize) -> Result<IndexSets> {
    if i >= view.len() {
        return Err(Error::InvalidArgument(format!("anchor {i} outside batch of {}", view.len())));
    }
    if !view.anchor[i] {
        return Err(Error::InvalidArgument(format!("row {i} is not an anchor")));
    }
    let (c, s) = view.labels[i];
    let all: Vec<usize> = (0..view.len()).filter(|&a| a != i).collect();
    let same_class: Vec<usize> = all.iter().copied().filter(|&a| view.labels[a].0 == c).collect();
    let same_subclass = same_class
        .iter()
        .copied()
        .filter(|&a| view.labels[a].1 == s)
        .collect();
    Ok(IndexSets {
        all,
        same_class,
        same_subclass,
    })
}

/// A summed loss and its per-anchor terms.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub total: TensorId,
    pub per_anchor: Vec<(usize, TensorId)>,
}

fn similarities(tape: &mut Tape, z: TensorId, view: &BatchView, tau: f64) -> Result<TensorId> {
    let n = tape.value(z).rows();
    if n != view.len() {
        return Err(Error::ShapeMismatch {
            op: "contrastive batch",
            lhs: tape.value(z).shape(),
            rhs: (view.len(), 1),
        });
    }
    if n < 2 {
        return Err(Error::InvalidArgument("contrastive loss needs at least 2 rows".into()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let s = tape.matmul_nt(z, z)?;
    tape.scale(s, 1.0 / tau)
}

/// `log Σ_{a∈denominator} exp(s_ia) − mean_{p∈positives} s_ip`.
fn anchor_term(
    tape: &mut Tape,
    sim: TensorId,
    i: usize,
    positives: &[usize],
    denominator: &[usize],
) -> Result<TensorId> {
    let den = tape.gather(sim, denominator.iter().map(|&a| (i, a)).collect())?;
    let lse = tape.log_sum_exp_row(den)?;
    let pos = tape.gather(sim, positives.iter().map(|&p| (i, p)).collect())?;
    let pos = tape.sum(pos)?;
    let pos = tape.scale(pos, 1.0 / positives.len() as f64)?;
    tape.sub(lse, pos)
}

fn sum_terms(tape: &mut Tape, terms: &[(usize, TensorId)]) -> Result<TensorId> {
    let mut iter = terms.iter();
    match iter.next() {
        None => Ok(tape.constant(crate::autodiff::Matrix::scalar(0.0))),
        Some(&(_, first)) => iter.try_fold(first, |acc, &(_, t)| tape.add(acc, t)),
    }
}

/// Intra-subclass loss over the rows of `z`, temperature `tau`.
pub fn intra_loss(tape: &mut Tape, z: TensorId, view: &BatchView, tau: f64) -> Result<LossTerms> {
    let sim = similarities(tape, z, view, tau)?;
    let mut per_anchor = Vec::new();
    for i in (0..view.len()).filter(|&i| view.anchor[i]) {
        let sets = index_sets(view, i)?;
        if sets.same_subclass.is_empty() {
            continue;
        }
        let t = anchor_term(tape, sim, i, &sets.same_subclass, &sets.all)?;
        per_anchor.push((i, t));
    }
    let total = sum_terms(tape, &per_anchor)?;
    Ok(LossTerms { total, per_anchor })
}

/// Inter-subclass loss over the rows of `z`, temperature `tau`.
pub fn inter_loss(tape: &mut Tape, z: TensorId, view: &BatchView, tau: f64) -> Result<LossTerms> {
    let sim = similarities(tape, z, view, tau)?;
    let mut per_anchor = Vec::new();
    for i in (0..view.len()).filter(|&i| view.anchor[i]) {
        let sets = index_sets(view, i)?;
        let (c, s) = view.labels[i];
        let positives: Vec<usize> = sets
            .same_class
            .iter()
            .copied()
            .filter(|&p| view.labels[p].1 != s)
            .collect();
        if positives.is_empty() {
            continue;
        }
        let denominator: Vec<usize> = sets
            .all
            .iter()
            .copied()
            .filter(|&a| view.labels[a] != (c, s))
            .collect();
        let t = anchor_term(tape, sim, i, &positives, &denominator)?;
        per_anchor.push((i, t));
    }
    let total = sum_terms(tape, &per_anchor)?;
    Ok(LossTerms { total, per_anchor })
}

/// Mean cross-entropy of `logits` (one row per graph) against `labels`.
pub fn cross_entropy(tape: &mut Tape, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
    let (rows, k) = tape.value(logits).shape();
    if rows != labels.len() || rows == 0 {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {rows} logit rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} outside {k} classes")));
    }
    let lse = tape.log_sum_exp_row(logits)?;
    let lse = tape.sum(lse)?;
    let picked = tape.gather(logits, labels.iter().copied().enumerate().collect())?;
    let picked = tape.sum(picked)?;
    let total = tape.sub(lse, picked)?;
    tape.scale(total, 1.0 / rows as f64)
}

/// Which terms enter the joint objective, and their weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub temperature: f64,
    pub beta: f64,
    pub cross_entropy: bool,
    pub intra: bool,
    pub inter: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            temperature: 0.2,
            beta: 1.0,
            cross_entropy: true,
            intra: true,
            inter: true,
        }
    }
}

impl LossConfig {
    pub fn contrastive(&self) -> bool {
        self.intra || self.inter
    }
}

/// The joint objective and its parts; disabled parts are `None`.
#[derive(Clone, Debug)]
pub struct JointLoss {
    pub total: TensorId,
    pub cross_entropy: Option<TensorId>,
    pub intra: Option<TensorId>,
    pub inter: Option<TensorId>,
}

/// `CE + Σ intra + β Σ inter`. Contrastive terms are only built when enabled;
/// `contrast` may then be `None`.
pub fn joint_loss(
    tape: &mut Tape,
    logits: TensorId,
    labels: &[usize],
    contrast: Option<(TensorId, &BatchView)>,
    cfg: &LossConfig,
) -> Result<JointLoss> {
    if !(cfg.beta >= 0.0 && cfg.beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be nonnegative, got {}", cfg.beta)));
    }
    let mut parts = Vec::new();
    let ce = if cfg.cross_entropy {
        let ce = cross_entropy(tape, logits, labels)?;
        parts.push(ce);
        Some(ce)
    } else {
        None
    };
    let (mut intra, mut inter) = (None, None);
    if cfg.contrastive() {
        let (z, view) = contrast
            .ok_or_else(|| Error::InvalidArgument("contrastive terms enabled without embeddings".into()))?;
        if cfg.intra {
            let t = intra_loss(tape, z, view, cfg.temperature)?.total;
            parts.push(t);
            intra = Some(t);
        }
        if cfg.inter {
            let t = inter_loss(tape, z, view, cfg.temperature)?.total;
            parts.push(tape.scale(t, cfg.beta)?);
            inter = Some(t);
        }
    }
    let mut total = match parts.first() {
        Some(&p) => p,
        None => return Err(Error::InvalidArgument("every loss term is disabled".into())),
    };
    for &p in &parts[1..] {
        total = tape.add(total, p)?;
    }
    Ok(JointLoss {
        total,
        cross_entropy: ce,
        intra,
        inter,
    })
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::autodiff::{grad_check, GradCheck, Matrix};
    use crate::rng;

    fn unit_rows(rows: &[&[f64]]) -> Matrix {
        let normed: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                r.iter().map(|v| v / n).collect()
            })
            .collect();
        Matrix::from_rows(&normed)
    }

    fn random_unit(n: usize, d: usize, seed: u64) -> Matrix {
        let mut r = rng::rng(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        unit_rows(&refs)
    }

    fn eval_terms<F>(z: &Matrix, f: F) -> (f64, Vec<(usize, f64)>)
    where
        F: Fn(&mut Tape, TensorId) -> Result<LossTerms>,
    {
        let mut t = Tape::new();
        let id = t.constant(z.clone());
        let terms = f(&mut t, id).unwrap();
        let per = terms.per_anchor.iter().map(|&(i, x)| (i, t.scalar(x))).collect();
        (t.scalar(terms.total), per)
    }

    /// Eq.-by-eq. evaluation with plain exponentials, no shared work.
    fn naive_supcon(z: &Matrix, classes: &[usize], tau: f64) -> f64 {
        let n = z.rows();
        let dot = |i: usize, j: usize| -> f64 { z.row(i).iter().zip(z.row(j)).map(|(a, b)| a * b).sum() };
        let mut total = 0.0;
        for i in 0..n {
            let pos: Vec<usize> = (0..n).filter(|&j| j != i && classes[j] == classes[i]).collect();
            if pos.is_empty() {
                continue;
            }
            let mut acc = 0.0;
            for &p in &pos {
                let mut den = 0.0;
                for a in (0..n).filter(|&a| a != i) {
                    den += (dot(i, a) / tau).exp();
                }
                acc += ((dot(i, p) / tau).exp() / den).ln();
            }
            total += -acc / pos.len() as f64;
        }
        total
    }

    #[test]
    fn index_set_examples() {
        let v = BatchView::all_anchors(vec![(0, 0); 4]);
        let s = index_sets(&v, 0).unwrap();
        assert_eq!(s.all, vec![1, 2, 3]);
        assert_eq!(s.same_class, s.all);
        assert_eq!(s.same_subclass, s.all);

        let v = BatchView::all_anchors(vec![(1, 0), (1, 0), (1, 1), (2, 1)]);
        let s = index_sets(&v, 0).unwrap();
        assert_eq!(s.same_subclass, vec![1]);
        assert_eq!(s.same_class, vec![1, 2]);
        assert_eq!(s.all, vec![1, 2, 3]);

        assert!(index_sets(&v, 4).is_err());
        let v = BatchView::new(vec![(0, 0), (0, 0)], vec![true, false]).unwrap();
        assert!(index_sets(&v, 1).is_err());
    }

    #[test]
    fn identical_embeddings_give_ln3_per_anchor() {
        let z = Matrix::from_rows(&[[0.6, 0.8]; 4]);
        for tau in [0.05, 0.2, 1.0, 7.0] {
            let (_, per) = eval_terms(&z, |t, id| intra_loss(t, id, &BatchView::all_anchors(vec![(0, 0); 4]), tau));
            assert_eq!(per.len(), 4);
            for (_, v) in per {
                assert!((v - 3f64.ln()).abs() <= 1e-12, "{v}");
            }
        }
    }

    #[test]
    fn intra_hand_case() {
        let z = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]);
        let view = BatchView::all_anchors(vec![(0, 0), (0, 1), (0, 0)]);
        let (_, per) = eval_terms(&z, |t, id| intra_loss(t, id, &view, 0.5));
        let anchor0 = per.iter().find(|(i, _)| *i == 0).unwrap().1;
        // −log(e² / (e⁰ + e²))
        let oracle = -((2f64).exp() / (1.0 + (2f64).exp())).ln();
        assert!((anchor0 - oracle).abs() <= 1e-12);
        assert!((anchor0 - (1.0 + (-2f64).exp()).ln()).abs() <= 1e-12);
        // Anchor 1 has no same-subclass partner.
        assert!(per.iter().all(|(i, _)| *i != 1));
    }

    #[test]
    fn two_views_only_give_zero() {
        let z = random_unit(2, 3, 1);
        let (total, _) = eval_terms(&z, |t, id| intra_loss(t, id, &BatchView::all_anchors(vec![(0, 0); 2]), 0.2));
        assert!(total.abs() < 1e-15);
    }

    #[test]
    fn inter_hand_case() {
        let z = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]);
        let view = BatchView::all_anchors(vec![(0, 0), (0, 1), (1, 0)]);
        let (_, per) = eval_terms(&z, |t, id| inter_loss(t, id, &view, 1.0));
        let anchor0 = per.iter().find(|(i, _)| *i == 0).unwrap().1;
        let oracle = -(1.0f64 / (1.0 + (-1f64).exp())).ln();
        assert!((anchor0 - oracle).abs() <= 1e-12);
    }

    #[test]
    fn single_subclass_classes() {
        for seed in 0..20u64 {
            let mut r = rng::rng(seed);
            let n = r.gen_range(2..14);
            let classes: Vec<usize> = (0..n).map(|_| r.gen_range(0..3)).collect();
            let view = BatchView::all_anchors(classes.iter().map(|&c| (c, 0)).collect());
            let z = random_unit(n, 4, seed + 100);
            let (intra, _) = eval_terms(&z, |t, id| intra_loss(t, id, &view, 0.2));
            assert!((intra - naive_supcon(&z, &classes, 0.2)).abs() <= 1e-9);
            let (inter, per) = eval_terms(&z, |t, id| inter_loss(t, id, &view, 0.2));
            assert_eq!(inter, 0.0);
            assert!(per.is_empty());
        }
    }

    #[test]
    fn losses_are_permutation_invariant_and_nonnegative() {
        let mut r = rng::rng(5);
        let n = 10;
        let labels: Vec<(usize, usize)> = (0..n).map(|_| (r.gen_range(0..2), r.gen_range(0..2))).collect();
        let z = random_unit(n, 3, 9);
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
        let zp = Matrix::from_rows(&perm.iter().map(|&p| z.row(p).to_vec()).collect::<Vec<_>>());
        let lp: Vec<_> = perm.iter().map(|&p| labels[p]).collect();
        let v = BatchView::all_anchors(labels);
        let vp = BatchView::all_anchors(lp);
        for f in [intra_loss, inter_loss] {
            let (a, per) = eval_terms(&z, |t, id| f(t, id, &v, 0.3));
            let (b, _) = eval_terms(&zp, |t, id| f(t, id, &vp, 0.3));
            assert!((a - b).abs() < 1e-10);
            assert!(per.iter().all(|(_, x)| *x >= 0.0));
        }
    }

    #[test]
    fn synthetic_rows_are_never_anchors() {
        let z = random_unit(4, 3, 2);
        let view = BatchView::new(vec![(0, 0); 4], vec![true, true, false, false]).unwrap();
        let (_, per) = eval_terms(&z, |t, id| intra_loss(t, id, &view, 0.2));
        assert_eq!(per.iter().map(|p| p.0).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn rejects_bad_batches() {
        let mut t = Tape::new();
        let z = t.constant(random_unit(1, 2, 0));
        assert!(intra_loss(&mut t, z, &BatchView::all_anchors(vec![(0, 0)]), 0.2).is_err());
        let z = t.constant(random_unit(3, 2, 0));
        assert!(inter_loss(&mut t, z, &BatchView::all_anchors(vec![(0, 0); 2]), 0.2).is_err());
        assert!(intra_loss(&mut t, z, &BatchView::all_anchors(vec![(0, 0); 3]), 0.0).is_err());
    }

    #[test]
    fn cross_entropy_values() {
        let mut t = Tape::new();
        let l = t.constant(Matrix::zeros(3, 4));
        let ce = cross_entropy(&mut t, l, &[0, 1, 3]).unwrap();
        assert!((t.scalar(ce) - 4f64.ln()).abs() < 1e-15);
        let l = t.constant(Matrix::from_rows(&[[800.0, 0.0, 0.0]]));
        let ce = cross_entropy(&mut t, l, &[0]).unwrap();
        assert_eq!(t.scalar(ce), 0.0);
        assert!(cross_entropy(&mut t, l, &[3]).is_err());
        assert!(cross_entropy(&mut t, l, &[0, 0]).is_err());
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_one_hot() {
        let logits = Matrix::from_rows(&[[0.3, -1.2, 2.0], [0.0, 0.5, -0.5]]);
        let labels = [2, 0];
        let mut t = Tape::new();
        let id = t.param(logits.clone());
        let ce = cross_entropy(&mut t, id, &labels).unwrap();
        t.backward(ce).unwrap();
        let g = t.grad(id).unwrap();
        for r in 0..2 {
            let row = logits.row(r);
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            for c in 0..3 {
                let expected = (row[c].exp() / z - if c == labels[r] { 1.0 } else { 0.0 }) / 2.0;
                assert!((g[(r, c)] - expected).abs() < 1e-15);
            }
        }
        let report = grad_check(|t, x| cross_entropy(t, x, &labels), &logits, GradCheck::default()).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn loss_gradients_on_random_unit_batches() {
        for seed in 0..5u64 {
            let mut r = rng::rng(seed);
            let n = 8;
            let labels: Vec<(usize, usize)> = (0..n).map(|_| (r.gen_range(0..2), r.gen_range(0..2))).collect();
            let view = BatchView::all_anchors(labels);
            let raw = random_unit(n, 4, seed + 50);
            for f in [intra_loss, inter_loss] {
                let report = grad_check(
                    |t, x| {
                        let z = t.row_l2_normalize(x)?;
                        Ok(f(t, z, &view, 0.2)?.total)
                    },
                    &raw,
                    GradCheck::with_tol(1e-4),
                )
                .unwrap();
                assert!(report.passed, "{report:?}");
            }
        }
    }

    #[test]
    fn joint_loss_composition() {
        let z = random_unit(6, 3, 4);
        let logits = Matrix::from_rows(&[[0.1, 0.4], [1.0, -1.0], [0.0, 0.3]]);
        let labels = [0, 1, 1];
        let view = BatchView::all_anchors(vec![(0, 0), (0, 1), (1, 0), (0, 0), (0, 1), (1, 0)]);
        let eval = |cfg: LossConfig| {
            let mut t = Tape::new();
            let zi = t.constant(z.clone());
            let li = t.constant(logits.clone());
            let j = joint_loss(&mut t, li, &labels, Some((zi, &view)), &cfg).unwrap();
            let part = |x: Option<TensorId>| x.map(|x| t.scalar(x));
            (t.scalar(j.total), part(j.cross_entropy), part(j.intra), part(j.inter))
        };
        let base = LossConfig::default();
        let (full, ce, intra, inter) = eval(base);
        let (ce, intra, inter) = (ce.unwrap(), intra.unwrap(), inter.unwrap());
        assert!(inter > 0.0);
        assert!((full - (ce + intra + inter)).abs() < 1e-12);

        let (b0, ..) = eval(LossConfig { beta: 0.0, ..base });
        assert!((b0 - (ce + intra)).abs() < 1e-12);
        let (b2, ..) = eval(LossConfig { beta: 2.0, ..base });
        assert!(((b2 - b0) - 2.0 * (full - b0)).abs() < 1e-12);

        let (only_ce, _, i, e) = eval(LossConfig { intra: false, inter: false, ..base });
        assert_eq!(only_ce, ce);
        assert!(i.is_none() && e.is_none());

        let mut t = Tape::new();
        let li = t.constant(logits.clone());
        assert!(joint_loss(&mut t, li, &labels, None, &base).is_err());
        assert!(joint_loss(&mut t, li, &labels, None, &LossConfig { intra: false, inter: false, ..base }).is_ok());
    }
}
