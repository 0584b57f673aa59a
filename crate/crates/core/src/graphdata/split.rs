use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Split proportions plus the imbalance imposed on the train part.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub imbalance_factor: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.6,
            val_frac: 0.2,
            test_frac: 0.2,
            imbalance_factor: 1.0,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(Error::InvalidArgument(format!("split fractions must be positive: {fr:?}")));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("split fractions must sum to 1: {fr:?}")));
        }
        if !(self.imbalance_factor >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "imbalance factor must be >= 1, got {}",
                self.imbalance_factor
            )));
        }
        Ok(())
    }

    fn fractions(&self) -> [f64; 3] {
        [self.train_frac, self.val_frac, self.test_frac]
    }
}

/// Largest-remainder apportionment of `n` items over `fractions`, with every
/// slot receiving at least one item. Remainder ties go to the lower slot.
pub fn allocate_counts(n: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    let slots = fractions.len();
    if n < slots {
        return Err(Error::InvalidArgument(format!(
            "{n} items cannot fill {slots} split slots"
        )));
    }
    // One item per slot up front, the rest by largest remainder on the
    // shifted targets. Identical to plain largest remainder whenever every
    // target is at least one.
    let spare = n - slots;
    let targets: Vec<f64> = fractions
        .iter()
        .map(|f| (n as f64 * f - 1.0).max(0.0))
        .collect();
    let total: f64 = targets.iter().sum();
    let scaled: Vec<f64> = targets
        .iter()
        .map(|t| if total > 0.0 { t * spare as f64 / total } else { 0.0 })
        .collect();
    let mut counts: Vec<usize> = scaled.iter().map(|s| s.floor() as usize).collect();
    let mut left = spare - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..slots).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (scaled[a] - scaled[a].floor(), scaled[b] - scaled[b].floor());
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &s in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[s] += 1;
        left -= 1;
    }
    Ok(counts.into_iter().map(|c| c + 1).collect())
}

/// Per-class stratified split into (train, val, test). Deterministic in
/// `spec.seed`; every class contributes at least one graph to every split.
pub fn stratified_split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (class, mut members) in dataset.class_members().into_iter().enumerate() {
        if members.len() < 3 {
            return Err(Error::InvalidDataset(format!(
                "class {class} has {} graphs, need at least 3 to split",
                members.len()
            )));
        }
        let counts = allocate_counts(members.len(), &spec.fractions())?;
        members.shuffle(&mut rng::child(spec.seed, &[0x5b1, class as u64]));
        let mut offset = 0;
        for (part, &c) in parts.iter_mut().zip(&counts) {
            part.extend_from_slice(&members[offset..offset + c]);
            offset += c;
        }
    }
    for part in &mut parts {
        part.sort_unstable();
    }
    Ok((
        dataset.subset(&parts[0])?,
        dataset.subset(&parts[1])?,
        dataset.subset(&parts[2])?,
    ))
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Target class sizes by rank `j = 1..=k`: `max(1, round(n1 · j^(−γ)))`
/// with `γ = ln(IF) / ln(k)`, so rank `k` lands on `n1 / IF`.
pub fn zipf_counts(n1: usize, k: usize, imbalance_factor: f64) -> Result<Vec<usize>> {
    if !(imbalance_factor >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "imbalance factor must be >= 1, got {imbalance_factor}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("zero classes".into()));
    }
    if k == 1 {
        if imbalance_factor > 1.0 {
            return Err(Error::InvalidArgument(
                "a single class cannot carry an imbalance factor above 1".into(),
            ));
        }
        return Ok(vec![n1]);
    }
    let gamma = imbalance_factor.ln() / (k as f64).ln();
    Ok((1..=k)
        .map(|j| {
            if j == 1 {
                n1
            } else if j == k {
                // Pin the tail to n1 / IF exactly rather than through pow().
                round_half_up(n1 as f64 / imbalance_factor).max(1)
            } else {
                round_half_up(n1 as f64 * (j as f64).powf(-gamma)).max(1)
            }
        })
        .collect())
}

/// Subsample a (train) split so class sizes follow a Zipf profile with the
/// requested imbalance factor. Classes are ranked by descending size (ties by
/// class index); rank-`j` targets are capped at the class's actual size.
pub fn make_imbalanced(train: &Dataset, imbalance_factor: f64, seed: u64) -> Result<Dataset> {
    let k = train.num_classes();
    let members = train.class_members();
    let mut ranked: Vec<usize> = (0..k).collect();
    ranked.sort_by(|&a, &b| members[b].len().cmp(&members[a].len()).then(a.cmp(&b)));
    let n1 = members[ranked[0]].len();
    let targets = zipf_counts(n1, k, imbalance_factor)?;

    let mut keep = Vec::new();
    for (rank, &class) in ranked.iter().enumerate() {
        let pool = &members[class];
        let want = targets[rank].min(pool.len());
        if want == pool.len() {
            keep.extend_from_slice(pool);
            continue;
        }
        let mut pool = pool.clone();
        pool.shuffle(&mut rng::child(seed, &[0x1b, class as u64]));
        keep.extend_from_slice(&pool[..want]);
    }
    keep.sort_unstable();
    train.subset(&keep)
}

/// `max_count / min_count` over classes.
pub fn imbalance_factor(dataset: &Dataset) -> Result<f64> {
    ratio_of_counts(&dataset.class_counts())
}

pub(crate) fn ratio_of_counts(counts: &[usize]) -> Result<f64> {
    let max = counts.iter().copied().max().unwrap_or(0);
    let min = counts.iter().copied().min().unwrap_or(0);
    if min == 0 {
        return Err(Error::InvalidDataset("empty class".into()));
    }
    Ok(max as f64 / min as f64)
}
