//! Training loop: cross-entropy warm-up, subclass clustering with periodic
//! refresh, two augmented views per graph, mixup, the joint loss and Adam.

mod adam;
mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use config::{TrainConfig, Variant, ALL_VARIANTS};

use crate::analysis::balanced_accuracy;
use crate::augmentation::{sample_kind, view_pair, AugmentationKind};
use crate::autodiff::{SparseRows, Tape, TensorId};
use crate::contrastive::{joint_loss, BatchView, LossConfig};
use crate::encoder::{classify_batch, encode_batch, init_params, project_batch, EncoderDims, EncoderParams, GraphBatch};
use crate::error::{Error, Result};
use crate::graphdata::{Dataset, Graph};
use crate::rng;
use crate::subclassing::{assign_subclasses, plan_mixup, refresh_assignments, subclass_cap, SubclassAssignment};

/// Epoch means of the loss terms; contrastive terms are 0 when not computed.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochLosses {
    pub cross_entropy: f64,
    pub intra: f64,
    pub inter: f64,
    pub steps: usize,
    /// Rows entering the contrastive losses in the last step (views plus
    /// synthetic samples); 0 without contrastive terms.
    pub last_batch_rows: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub cross_entropy: f64,
    pub intra: f64,
    pub inter: f64,
    pub val_top1: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

pub const HISTORY_HEADER: &str = "epoch\tce\tintra\tinter\tval_top1";

impl History {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Highest validation accuracy and the first epoch reaching it.
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.val_top1 >= r.val_top1 => Some(b),
                _ => Some(r),
            })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{HISTORY_HEADER}\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.epoch, r.cross_entropy, r.intra, r.inter, r.val_top1
            );
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Everything [`fit`] produces.
#[derive(Clone, Debug)]
pub struct FitResult {
    /// Parameters from the epoch with the best validation accuracy.
    pub params: EncoderParams,
    pub history: History,
    pub best_epoch: usize,
    pub best_val: f64,
    /// Latest subclass assignment, if clustering ran.
    pub assignment: Option<Arc<SubclassAssignment>>,
}

pub fn encoder_dims(cfg: &TrainConfig, train: &Dataset) -> EncoderDims {
    EncoderDims {
        input: train.feature_dim(),
        hidden: cfg.hidden_dim,
        embed: cfg.embed_dim,
        proj: cfg.proj_dim,
        classes: train.num_classes(),
        layers: cfg.layers,
    }
}

pub fn loss_config(cfg: &TrainConfig) -> LossConfig {
    LossConfig {
        temperature: cfg.temperature,
        beta: cfg.beta,
        cross_entropy: !cfg.two_stage,
        intra: cfg.hscl,
        inter: cfg.hscl,
    }
}

/// Subclass cap for a training set: `max(smallest class, delta)`.
pub fn training_cap(train: &Dataset, cfg: &TrainConfig) -> Result<usize> {
    let smallest = train.class_counts().into_iter().min().unwrap_or(0);
    subclass_cap(smallest, cfg.delta)
}

/// Which objective a step optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    /// Cross-entropy on the whole model.
    Warmup,
    /// The configured objective.
    Main,
    /// Cross-entropy on the classifier head only (second stage).
    Head,
}

fn select_rows(tape: &mut Tape, x: TensorId, rows: std::ops::Range<usize>) -> Result<TensorId> {
    let total = tape.value(x).rows();
    let map = SparseRows::new(total, rows.map(|r| vec![(r, 1.0)]).collect())?;
    tape.sparse_rows(Arc::new(map), x)
}

/// Batch index lists for one epoch: a seeded shuffle cut into full batches.
/// A training set smaller than one batch forms a single batch.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::child(seed, &[0xe0c, epoch as u64]));
    if n < batch_size {
        return vec![order];
    }
    order.chunks_exact(batch_size).map(|c| c.to_vec()).collect()
}

fn augmented_views(
    graphs: &[&Graph],
    kinds: &[AugmentationKind],
    ratio: f64,
    seed: u64,
) -> Result<Vec<(Graph, Graph)>> {
    graphs
        .par_iter()
        .zip(kinds)
        .enumerate()
        .map(|(j, (g, &kind))| {
            if kind.applies_to(g) {
                view_pair(g, kind, ratio, rng::derive(seed, &[j as u64]))
            } else {
                Ok(((*g).clone(), (*g).clone()))
            }
        })
        .collect()
}

/// One gradient step on the listed graphs. Contrastive terms are built only
/// when `assignment` is given and `cfg.hscl` is on.
fn train_step(
    train: &Dataset,
    batch: &[usize],
    params: &mut EncoderParams,
    assignment: Option<&SubclassAssignment>,
    state: &mut AdamState,
    cfg: &TrainConfig,
    step_seed: u64,
    phase: Phase,
) -> Result<(f64, f64, f64, usize)> {
    let ce_only = phase != Phase::Main;
    let sources: Vec<&Graph> = batch.iter().map(|&i| &train.graphs()[i].graph).collect();
    let labels: Vec<usize> = batch.iter().map(|&i| train.graphs()[i].label).collect();
    let b = batch.len();
    let contrast = match assignment {
        Some(a) if cfg.hscl && !ce_only => Some(a),
        _ => None,
    };

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let mut loss_cfg = loss_config(cfg);
    if ce_only {
        loss_cfg = LossConfig {
            cross_entropy: true,
            intra: false,
            inter: false,
            ..loss_cfg
        };
    }
    let (loss, rows) = if let Some(assignment) = contrast {
        let mut r = rng::child(step_seed, &[0xa06]);
        let kinds: Vec<AugmentationKind> = if cfg.augmentation_per_graph {
            (0..b).map(|_| sample_kind(&mut r)).collect()
        } else {
            vec![sample_kind(&mut r); b]
        };
        let views = augmented_views(&sources, &kinds, cfg.augmentation_ratio, rng::derive(step_seed, &[0xa07]))?;
        let mut all: Vec<&Graph> = sources.clone();
        all.extend(views.iter().map(|v| &v.0));
        all.extend(views.iter().map(|v| &v.1));
        let packed = GraphBatch::new(&all)?;
        let h = encode_batch(&mut tape, &bound, &packed)?;
        let h_src = select_rows(&mut tape, h, 0..b)?;
        let h_views = select_rows(&mut tape, h, b..3 * b)?;
        let logits = classify_batch(&mut tape, &bound, h_src)?;
        let z = project_batch(&mut tape, &bound, h_views)?;

        let mut view_labels: Vec<(usize, usize)> = batch.iter().map(|&i| assignment.omega[i]).collect();
        view_labels.extend_from_within(..);
        let mut anchors = vec![true; 2 * b];
        let mut z_all = z;
        if cfg.mixup {
            let view_sources: Vec<usize> = (0..2 * b).map(|r| r % b).collect();
            let plans = plan_mixup(&view_labels, &view_sources, &mut rng::child(step_seed, &[0x313]))?;
            if !plans.is_empty() {
                let mixed = crate::subclassing::mixup_rows(&mut tape, z, &plans)?;
                z_all = tape.concat_rows(z, mixed)?;
                view_labels.extend(plans.iter().map(|p| p.label));
                anchors.extend(std::iter::repeat(false).take(plans.len()));
            }
        }
        let rows = view_labels.len();
        let view = BatchView::new(view_labels, anchors)?;
        (joint_loss(&mut tape, logits, &labels, Some((z_all, &view)), &loss_cfg)?, rows)
    } else {
        let packed = GraphBatch::new(&sources)?;
        let h = encode_batch(&mut tape, &bound, &packed)?;
        let logits = classify_batch(&mut tape, &bound, h)?;
        let ce_cfg = LossConfig {
            cross_entropy: true,
            intra: false,
            inter: false,
            ..loss_cfg
        };
        (joint_loss(&mut tape, logits, &labels, None, &ce_cfg)?, 0)
    };

    let total = tape.scalar(loss.total);
    if !total.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    tape.backward(loss.total)?;
    let mut grads = bound.gradients(&tape);
    if phase == Phase::Head {
        // Classifier-only stage: the encoder and projection stay frozen.
        let frozen = params.num_tensors() - 4;
        for g in &mut grads[..frozen] {
            g.scale_assign(0.0);
        }
    }
    adam_step(params, &grads, state, cfg.learning_rate)?;
    let value = |id: Option<TensorId>| id.map_or(0.0, |t| tape.scalar(t));
    Ok((value(loss.cross_entropy), value(loss.intra), value(loss.inter), rows))
}

/// One pass over the training set.
pub fn train_epoch(
    train: &Dataset,
    params: &mut EncoderParams,
    assignment: Option<&SubclassAssignment>,
    state: &mut AdamState,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochLosses> {
    run_epoch(train, params, assignment, state, cfg, epoch, Phase::Main)
}

fn run_epoch(
    train: &Dataset,
    params: &mut EncoderParams,
    assignment: Option<&SubclassAssignment>,
    state: &mut AdamState,
    cfg: &TrainConfig,
    epoch: usize,
    phase: Phase,
) -> Result<EpochLosses> {
    let mut out = EpochLosses::default();
    for (bi, batch) in epoch_batches(train.len(), cfg.batch_size, cfg.seed, epoch).iter().enumerate() {
        let step_seed = rng::derive(cfg.seed, &[0x57e9, epoch as u64, bi as u64]);
        let (ce, intra, inter, rows) = train_step(train, batch, params, assignment, state, cfg, step_seed, phase)?;
        out.cross_entropy += ce;
        out.intra += intra;
        out.inter += inter;
        out.steps += 1;
        out.last_batch_rows = rows;
    }
    if out.steps > 0 {
        let s = out.steps as f64;
        out.cross_entropy /= s;
        out.intra /= s;
        out.inter /= s;
    }
    Ok(out)
}

/// Cross-entropy-only training for `cfg.warmup_epochs` epochs.
pub fn warmup(train: &Dataset, params: &mut EncoderParams, state: &mut AdamState, cfg: &TrainConfig) -> Result<Vec<EpochLosses>> {
    (0..cfg.warmup_epochs)
        .map(|e| run_epoch(train, params, None, state, cfg, e, Phase::Warmup))
        .collect()
}

/// Full training run; see the module docs for the schedule.
///
/// Epochs are numbered from 0 and the warm-up epochs count toward
/// `cfg.epochs`. Clustering first runs at the end of warm-up and, with
/// adaptive refresh on, again at every later epoch divisible by
/// `cfg.refresh_interval`. In two-stage mode `cfg.head_epochs` classifier
/// epochs follow, and model selection happens among those.
pub fn fit(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    if train.num_classes() != val.num_classes() || train.feature_dim() != val.feature_dim() {
        return Err(Error::InvalidDataset("train and validation sets disagree in shape".into()));
    }
    let mut params = init_params(&encoder_dims(cfg, train), rng::derive(cfg.seed, &[0x1417]))?;
    let mut state = AdamState::new(&params);
    let cap = training_cap(train, cfg)?;
    let cluster_seed = rng::derive(cfg.seed, &[0xc1]);
    let mut assignment: Option<Arc<SubclassAssignment>> = None;
    let mut history = History::default();
    let mut best: Option<(f64, usize, EncoderParams)> = None;

    let mut record = |epoch: usize, losses: EpochLosses, params: &EncoderParams, select: bool| -> Result<()> {
        let val_top1 = balanced_accuracy(params, val)?;
        history.records.push(EpochRecord {
            epoch,
            cross_entropy: losses.cross_entropy,
            intra: losses.intra,
            inter: losses.inter,
            val_top1,
        });
        if select && best.as_ref().is_none_or(|b| val_top1 > b.0) {
            best = Some((val_top1, epoch, params.clone()));
        }
        Ok(())
    };

    for epoch in 0..cfg.epochs {
        let in_warmup = epoch < cfg.warmup_epochs;
        if cfg.hscl && !in_warmup {
            assignment = Some(match &assignment {
                None => Arc::new(assign_subclasses(
                    &crate::encoder::embed_dataset(&params, train)?,
                    &train.labels(),
                    train.num_classes(),
                    cap,
                    epoch,
                    cluster_seed,
                )?),
                Some(prev) if cfg.adaptive_refresh => {
                    refresh_assignments(&params, train, cap, epoch, cfg.refresh_interval, prev, cluster_seed)?
                }
                Some(prev) => Arc::clone(prev),
            });
        }
        let active = if in_warmup { None } else { assignment.as_deref() };
        let phase = if in_warmup { Phase::Warmup } else { Phase::Main };
        let losses = run_epoch(train, &mut params, active, &mut state, cfg, epoch, phase)?;
        record(epoch, losses, &params, !cfg.two_stage)?;
    }
    if cfg.two_stage {
        let mut head_state = AdamState::new(&params);
        for e in 0..cfg.head_epochs {
            let epoch = cfg.epochs + e;
            let losses = run_epoch(train, &mut params, None, &mut head_state, cfg, epoch, Phase::Head)?;
            record(epoch, losses, &params, true)?;
        }
    }
    let (best_val, best_epoch, params) = best.expect("at least one selectable epoch");
    Ok(FitResult {
        params,
        history,
        best_epoch,
        best_val,
        assignment,
    })
}
