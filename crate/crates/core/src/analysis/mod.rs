//! Accuracy metrics and the feature-distance analysis over graph embeddings.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::autodiff::Matrix;
use crate::encoder::{embed_dataset, predict, EncoderParams};
use crate::error::{Error, Result};
use crate::graphdata::Dataset;
use crate::subclassing::SubclassAssignment;

/// Environment variable bounding worker threads.
pub const THREADS_ENV: &str = "C3G_THREADS";

/// Configure the global worker pool from `C3G_THREADS` if set. Safe to call
/// more than once; only the first successful call takes effect.
pub fn init_threads_from_env() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn accuracy_of(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::InvalidArgument("accuracy needs matching, nonempty label lists".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean per-class recall over the classes present in `labels`.
pub fn balanced_accuracy_of(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    accuracy_of(predictions, labels)?;
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if l >= num_classes {
            return Err(Error::InvalidArgument(format!("label {l} outside {num_classes} classes")));
        }
        totals[l] += 1;
        hits[l] += usize::from(p == l);
    }
    let present: Vec<f64> = (0..num_classes)
        .filter(|&c| totals[c] > 0)
        .map(|c| hits[c] as f64 / totals[c] as f64)
        .collect();
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Fraction of graphs whose arg-max logit is the true label.
pub fn top1_accuracy(params: &EncoderParams, eval: &Dataset) -> Result<f64> {
    if eval.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    accuracy_of(&predict(params, eval)?, &eval.labels())
}

pub fn balanced_accuracy(params: &EncoderParams, eval: &Dataset) -> Result<f64> {
    if eval.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    balanced_accuracy_of(&predict(params, eval)?, &eval.labels(), eval.num_classes())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean Euclidean distance from `z` to the members of `set`.
pub fn set_distance(z: &[f64], set: &[&[f64]]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("distance to an empty set".into()));
    }
    Ok(set.iter().map(|s| dist(z, s)).sum::<f64>() / set.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Many,
    Medium,
    Few,
}

impl Region {
    pub fn name(self) -> &'static str {
        match self {
            Region::Many => "many",
            Region::Medium => "medium",
            Region::Few => "few",
        }
    }
}

/// Thirds of the classes by descending training count (ties by index):
/// rank `r` of `K` falls in region `floor(3r/K)`.
pub fn regions(train_counts: &[usize]) -> Vec<Region> {
    let k = train_counts.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| train_counts[b].cmp(&train_counts[a]).then(a.cmp(&b)));
    let mut out = vec![Region::Many; k];
    for (rank, &c) in order.iter().enumerate() {
        out[c] = match 3 * rank / k {
            0 => Region::Many,
            1 => Region::Medium,
            _ => Region::Few,
        };
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleDistances {
    pub graph_id: usize,
    pub class: usize,
    pub subclass: usize,
    pub region: Region,
    pub intra_class: Option<f64>,
    pub inter_class: Option<f64>,
    pub intra_subclass: Option<f64>,
    pub inter_subclass: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionSummary {
    pub region: Region,
    pub samples: usize,
    /// Means of intra-class, inter-class, intra-subclass, inter-subclass
    /// distances over samples where each is defined.
    pub means: [Option<f64>; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceReport {
    pub samples: Vec<SampleDistances>,
    pub regions: Vec<RegionSummary>,
    /// Classes holding more than one subclass.
    pub split_classes: Vec<usize>,
}

pub const DISTANCE_NAMES: [&str; 4] = ["intra_class", "inter_class", "intra_subclass", "inter_subclass"];

fn values(s: &SampleDistances) -> [Option<f64>; 4] {
    [s.intra_class, s.inter_class, s.intra_subclass, s.inter_subclass]
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Four distances per row of `h`, with sets formed among the rows:
/// `P` = same class, `Q` = same class and subclass, both excluding the row.
pub fn distance_report(
    h: &Matrix,
    labels: &[usize],
    subclasses: &[usize],
    train_counts: &[usize],
) -> Result<DistanceReport> {
    let n = h.rows();
    if labels.len() != n || subclasses.len() != n {
        return Err(Error::InvalidArgument("one class and subclass per embedding required".into()));
    }
    let k = train_counts.len();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} outside {k} classes")));
    }
    let region = regions(train_counts);
    let samples: Vec<SampleDistances> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (c, s) = (labels[i], subclasses[i]);
            let mut sets: [Vec<&[f64]>; 4] = Default::default();
            for j in (0..n).filter(|&j| j != i) {
                let row = h.row(j);
                if labels[j] == c {
                    sets[0].push(row);
                    if subclasses[j] == s {
                        sets[2].push(row);
                    } else {
                        sets[3].push(row);
                    }
                } else {
                    sets[1].push(row);
                }
            }
            let d = |set: &Vec<&[f64]>| set_distance(h.row(i), set).ok();
            SampleDistances {
                graph_id: i,
                class: c,
                subclass: s,
                region: region[c],
                intra_class: d(&sets[0]),
                inter_class: d(&sets[1]),
                intra_subclass: d(&sets[2]),
                inter_subclass: d(&sets[3]),
            }
        })
        .collect();
    let mut split_classes: Vec<usize> = Vec::new();
    for c in 0..k {
        let mut subs: Vec<usize> = (0..n).filter(|&i| labels[i] == c).map(|i| subclasses[i]).collect();
        subs.sort_unstable();
        subs.dedup();
        if subs.len() > 1 {
            split_classes.push(c);
        }
    }
    let regions = [Region::Many, Region::Medium, Region::Few]
        .into_iter()
        .map(|r| {
            let members: Vec<&SampleDistances> = samples.iter().filter(|s| s.region == r).collect();
            let means = std::array::from_fn(|m| mean(members.iter().filter_map(|s| values(s)[m])));
            RegionSummary {
                region: r,
                samples: members.len(),
                means,
            }
        })
        .collect();
    Ok(DistanceReport {
        samples,
        regions,
        split_classes,
    })
}

/// Subclass of each evaluation embedding: its class's nearest center.
pub fn nearest_subclasses(assignment: &SubclassAssignment, h: &Matrix, labels: &[usize]) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &c)| assignment.nearest_subclass(c, h.row(i)))
        .collect()
}

/// Embed `eval`, attach subclasses from `assignment`, and report.
pub fn analyze(
    params: &EncoderParams,
    assignment: &SubclassAssignment,
    eval: &Dataset,
    train_counts: &[usize],
) -> Result<DistanceReport> {
    let h = embed_dataset(params, eval)?;
    let labels = eval.labels();
    let subs = nearest_subclasses(assignment, &h, &labels);
    distance_report(&h, &labels, &subs, train_counts)
}

impl DistanceReport {
    /// Mean intra-subclass and intra-class distance over samples of split
    /// classes that have a same-subclass partner.
    pub fn split_class_means(&self) -> Option<(f64, f64)> {
        let picked: Vec<&SampleDistances> = self
            .samples
            .iter()
            .filter(|s| self.split_classes.contains(&s.class) && s.intra_subclass.is_some())
            .collect();
        let sub = mean(picked.iter().filter_map(|s| s.intra_subclass))?;
        let cls = mean(picked.iter().filter_map(|s| s.intra_class))?;
        Some((sub, cls))
    }

    /// Tab-separated per-sample records; undefined distances are `NA`.
    pub fn samples_table(&self) -> String {
        let mut out = String::from("graph_id\tclass\tsubclass\tregion");
        for n in DISTANCE_NAMES {
            out.push('\t');
            out.push_str(n);
        }
        out.push('\n');
        for s in &self.samples {
            let _ = write!(out, "{}\t{}\t{}\t{}", s.graph_id, s.class, s.subclass, s.region.name());
            for v in values(s) {
                match v {
                    Some(x) => {
                        let _ = write!(out, "\t{x}");
                    }
                    None => out.push_str("\tNA"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// `region  metric  samples  mean` lines.
    pub fn summary_table(&self) -> String {
        let mut out = String::from("region\tmetric\tmean\n");
        for r in &self.regions {
            for (name, m) in DISTANCE_NAMES.iter().zip(r.means) {
                let v = m.map_or_else(|| "NA".to_string(), |x| x.to_string());
                let _ = writeln!(out, "{}\t{name}\t{v}", r.region.name());
            }
        }
        out
    }

    /// Binned counts of each distance over `[0, max]`, whitespace separated
    /// with a `#` header, one row per bin.
    pub fn histogram_table(&self, bins: usize) -> String {
        let bins = bins.max(1);
        let all: Vec<[Option<f64>; 4]> = self.samples.iter().map(values).collect();
        let max = all.iter().flatten().flatten().fold(0.0f64, |m, &x| m.max(x));
        let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
        let mut counts = vec![[0usize; 4]; bins];
        for row in &all {
            for (m, v) in row.iter().enumerate() {
                if let Some(x) = v {
                    let b = ((x / width) as usize).min(bins - 1);
                    counts[b][m] += 1;
                }
            }
        }
        let mut out = format!("# bin_lo bin_hi {}\n", DISTANCE_NAMES.join(" "));
        for (b, c) in counts.iter().enumerate() {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {}",
                b as f64 * width,
                (b + 1) as f64 * width,
                c[0],
                c[1],
                c[2],
                c[3]
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_distance_examples() {
        assert_eq!(set_distance(&[0.0, 0.0], &[&[3.0, 4.0]]).unwrap(), 5.0);
        assert_eq!(set_distance(&[0.0, 0.0], &[&[3.0, 4.0], &[0.0, 0.0]]).unwrap(), 2.5);
        assert_eq!(set_distance(&[1.0, 2.0], &[&[1.0, 2.0]]).unwrap(), 0.0);
        assert!(set_distance(&[1.0], &[]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy_of(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy_of(&[0, 0, 0, 0], &[0, 0, 0, 1]).unwrap(), 0.75);
        assert_eq!(balanced_accuracy_of(&[0, 0, 0, 0], &[0, 0, 0, 1], 2).unwrap(), 0.5);
        assert!(accuracy_of(&[], &[]).is_err());
        assert!(balanced_accuracy_of(&[0], &[5], 2).is_err());
    }

    #[test]
    fn region_thirds() {
        assert_eq!(
            regions(&[127, 40, 20, 13]),
            vec![Region::Many, Region::Many, Region::Medium, Region::Few]
        );
        let r = regions(&[1, 9, 5, 7, 3, 2]);
        assert_eq!(
            r,
            vec![Region::Few, Region::Many, Region::Medium, Region::Many, Region::Medium, Region::Few]
        );
        for k in 1..12 {
            let r = regions(&vec![1; k]);
            assert_eq!(r.len(), k);
            assert_eq!(r[0], Region::Many);
        }
    }

    #[test]
    fn separated_clusters() {
        // Class 0 around x=0 in two tight subclasses, class 1 around x=100.
        let h = Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.1], [1.0, 0.0], [1.0, 0.1], [100.0, 0.0], [100.0, 0.2]]);
        let labels = [0, 0, 0, 0, 1, 1];
        let subs = [0, 0, 1, 1, 0, 0];
        let rep = distance_report(&h, &labels, &subs, &[4, 2]).unwrap();
        assert_eq!(rep.split_classes, vec![0]);
        for s in &rep.samples {
            assert!(s.intra_class.unwrap() < s.inter_class.unwrap());
        }
        let (sub, cls) = rep.split_class_means().unwrap();
        assert!(sub < cls);
        // Single-subclass class: intra-subclass equals intra-class.
        for s in rep.samples.iter().filter(|s| s.class == 1) {
            assert_eq!(s.intra_subclass, s.intra_class);
            assert_eq!(s.inter_subclass, None);
        }
        assert_eq!(rep.samples_table().lines().count(), 7);
        assert!(rep.samples_table().lines().nth(5).unwrap().ends_with("\tNA"));
        assert_eq!(rep.histogram_table(5).lines().count(), 6);
        assert_eq!(rep.summary_table().lines().count(), 13);
    }

    #[test]
    fn distances_are_invariant_to_sample_order() {
        let h = Matrix::from_rows(&[[0.0, 1.0], [2.0, 0.5], [3.0, 3.0], [1.0, -1.0], [0.5, 0.5]]);
        let labels = [0, 1, 0, 1, 0];
        let subs = [0, 0, 1, 0, 1];
        let a = distance_report(&h, &labels, &subs, &[3, 2]).unwrap();
        let perm = [4, 2, 0, 3, 1];
        let hp = Matrix::from_rows(&perm.iter().map(|&p| h.row(p).to_vec()).collect::<Vec<_>>());
        let lp: Vec<usize> = perm.iter().map(|&p| labels[p]).collect();
        let sp: Vec<usize> = perm.iter().map(|&p| subs[p]).collect();
        let b = distance_report(&hp, &lp, &sp, &[3, 2]).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            let (x, y) = (values(&a.samples[old]), values(&b.samples[new]));
            for (u, v) in x.iter().zip(&y) {
                match (u, v) {
                    (Some(u), Some(v)) => assert!((u - v).abs() < 1e-12),
                    (None, None) => {}
                    _ => panic!("definedness differs"),
                }
            }
        }
    }
}
