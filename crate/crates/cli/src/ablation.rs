//! The variant grid: every ablation variant trained on the same splits for
//! each seed, scored by balanced test accuracy.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use c3gnn::analysis::balanced_accuracy;
use c3gnn::graphdata::synthetic::{Benchmark, BenchmarkSpec, SyntheticConfig};
use c3gnn::trainer::{fit, TrainConfig, Variant};
use c3gnn::Result;

/// Settings for the desk-scale synthetic benchmark, shared by every variant.
pub const BENCHMARK_CONFIG: &str = include_str!("../../../configs/benchmark.cfg");

pub fn benchmark_config() -> TrainConfig {
    TrainConfig::parse(BENCHMARK_CONFIG).expect("built-in benchmark config is valid")
}

/// Four motif classes, 200 training graphs at IF = 10, 40 per class for
/// validation and test, no foreign motifs.
pub fn benchmark_spec() -> BenchmarkSpec {
    BenchmarkSpec {
        graphs: SyntheticConfig {
            noise_motif_prob: 0.0,
            ..SyntheticConfig::default()
        },
        ..BenchmarkSpec::default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub seeds: Vec<u64>,
    /// Balanced test accuracy per seed.
    pub accuracies: Vec<f64>,
    pub elapsed: Duration,
}

impl AblationRow {
    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len().max(1) as f64
    }

    pub fn std(&self) -> f64 {
        let n = self.accuracies.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.accuracies.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}

/// Train `variants` on `data(seed)` for every seed. The training seed is set
/// to the data seed.
pub fn run_ablation<F>(base: &TrainConfig, variants: &[Variant], seeds: &[u64], mut data: F) -> Result<Vec<AblationRow>>
where
    F: FnMut(u64) -> Result<Benchmark>,
{
    let splits = seeds.iter().map(|&s| data(s)).collect::<Result<Vec<_>>>()?;
    variants
        .iter()
        .map(|&variant| {
            let start = Instant::now();
            let accuracies = seeds
                .iter()
                .zip(&splits)
                .map(|(&seed, b)| {
                    let cfg = TrainConfig { seed, ..base.clone() }.for_variant(variant);
                    let fitted = fit(&b.train, &b.val, &cfg)?;
                    balanced_accuracy(&fitted.params, &b.test)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(AblationRow {
                variant,
                seeds: seeds.to_vec(),
                accuracies,
                elapsed: start.elapsed(),
            })
        })
        .collect()
}

/// `variant  mean  std  seconds  acc_seed...` with a header line.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant\tmean\tstd\tseconds");
    if let Some(r) = rows.first() {
        for s in &r.seeds {
            let _ = write!(out, "\tseed_{s}");
        }
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{}\t{:.4}\t{:.4}\t{:.1}", r.variant, r.mean(), r.std(), r.elapsed.as_secs_f64());
        for a in &r.accuracies {
            let _ = write!(out, "\t{a:.4}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn built_in_settings_are_valid() {
        let cfg = benchmark_config();
        assert!(cfg.hscl && cfg.mixup && cfg.adaptive_refresh);
        assert_eq!(cfg.batch_size, 64);
        let spec = benchmark_spec();
        assert_eq!(spec.imbalance_factor, 10.0);
        assert_eq!(spec.val_per_class, 40);
    }

    #[test]
    fn mean_and_std() {
        let row = AblationRow {
            variant: Variant::Full,
            seeds: vec![0, 1, 2],
            accuracies: vec![0.5, 0.7, 0.9],
            elapsed: Duration::ZERO,
        };
        assert!((row.mean() - 0.7).abs() < 1e-12);
        assert!((row.std() - 0.2).abs() < 1e-12);
        let t = ablation_table(&[row]);
        assert_eq!(t.lines().next().unwrap(), "variant\tmean\tstd\tseconds\tseed_0\tseed_1\tseed_2");
        assert!(t.lines().nth(1).unwrap().starts_with("full\t0.7000\t0.2000"));
    }
}
