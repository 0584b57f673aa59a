//! The `c3g` command line.
//!
//! Split directories hold `train.c3g`, `val.c3g` and `test.c3g` in the plain
//! dataset format. Every command writes plain files under `--out`.

pub mod ablation;
pub mod gradsuite;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use c3gnn::analysis::{analyze, balanced_accuracy, top1_accuracy, DistanceReport};
use c3gnn::encoder::{embed_dataset, read_checkpoint, write_checkpoint, EncoderParams};
use c3gnn::graphdata::synthetic::benchmark;
use c3gnn::graphdata::{make_imbalanced, parse_tu_dataset, read_dataset, stratified_split, write_dataset, Dataset, SplitSpec};
use c3gnn::subclassing::{assign_subclasses, SubclassAssignment};
use c3gnn::trainer::{fit, training_cap, FitResult, TrainConfig, Variant, ALL_VARIANTS};
use c3gnn::{rng, Error, Result};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];
pub const SPLIT_EXT: &str = "c3g";

#[derive(Debug, Parser)]
#[command(name = "c3g", version, about = "Class-imbalanced graph classification with subclass contrastive training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stratified 6:2:2 split of a dataset, then a Zipf-imbalanced train part.
    MakeImbalanced {
        /// TU dataset directory or a single dataset file.
        #[arg(long)]
        dataset: PathBuf,
        /// TU file prefix; defaults to the directory name.
        #[arg(long)]
        name: Option<String>,
        #[arg(long = "if")]
        imbalance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic motif benchmark splits.
    Synth {
        #[arg(long = "if", default_value_t = 10.0)]
        imbalance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Probability of a foreign motif in each slot.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a split directory; writes checkpoint, history, subclasses
    /// and the effective config.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-1 and balanced accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split directory or a single dataset file.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Feature-distance report for a checkpoint.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 40)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the full model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        batches: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Every variant over several seeds; the synthetic benchmark unless
    /// `--dataset` is given.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Restrict to one variant.
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse `argv` (program name first) and run; returns the process exit code.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::MakeImbalanced {
            dataset,
            name,
            imbalance,
            seed,
            out,
        } => {
            let data = load_source(&dataset, name.as_deref())?;
            let spec = SplitSpec {
                imbalance_factor: imbalance,
                seed,
                ..SplitSpec::default()
            };
            let (train, val, test) = stratified_split(&data, &spec)?;
            let train = make_imbalanced(&train, imbalance, rng::derive(seed, &[0x1f]))?;
            write_splits(&out, [&train, &val, &test])?;
            println!("train class counts {:?}", train.class_counts());
        }
        Command::Synth {
            imbalance,
            seed,
            noise,
            out,
        } => {
            let mut spec = ablation::benchmark_spec();
            spec.imbalance_factor = imbalance;
            if let Some(p) = noise {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidArgument(format!("noise must lie in [0, 1], got {p}")));
                }
                spec.graphs.noise_motif_prob = p;
            }
            let b = benchmark(&spec, seed)?;
            write_splits(&out, [&b.train, &b.val, &b.test])?;
            println!("train class counts {:?}", b.train.class_counts());
        }
        Command::Train {
            config,
            dataset,
            seed,
            variant,
            out,
        } => {
            let cfg = resolve_config(config.as_deref(), seed, variant)?;
            let (train, val) = (read_split(&dataset, "train")?, read_split(&dataset, "val")?);
            let result = fit(&train, &val, &cfg)?;
            write_training(&out, &cfg, &result)?;
            println!(
                "best epoch {} val balanced top-1 {:.4}",
                result.best_epoch, result.best_val
            );
        }
        Command::Eval {
            checkpoint,
            dataset,
            split,
            out,
        } => {
            let params = read_checkpoint(&checkpoint)?;
            let eval = if dataset.is_file() { read_dataset(&dataset)? } else { read_split(&dataset, &split)? };
            let text = format!(
                "top1\t{}\nbalanced_top1\t{}\n",
                top1_accuracy(&params, &eval)?,
                balanced_accuracy(&params, &eval)?
            );
            print!("{text}");
            if let Some(out) = out {
                create_dir(&out)?;
                write_file(&out.join("eval.tsv"), &text)?;
            }
        }
        Command::Analyze {
            checkpoint,
            dataset,
            config,
            seed,
            split,
            bins,
            out,
        } => {
            let cfg = resolve_config(config.as_deref(), seed, None)?;
            let params = read_checkpoint(&checkpoint)?;
            let train = read_split(&dataset, "train")?;
            let eval = read_split(&dataset, &split)?;
            let report = analyze_checkpoint(&params, &cfg, &train, &eval)?.1;
            create_dir(&out)?;
            write_file(&out.join("distances.tsv"), &report.samples_table())?;
            write_file(&out.join("summary.tsv"), &report.summary_table())?;
            write_file(&out.join("histogram.dat"), &report.histogram_table(bins))?;
            if let Some((sub, cls)) = report.split_class_means() {
                println!("split classes: mean intra-subclass {sub:.6}, mean intra-class {cls:.6}");
            }
        }
        Command::Gradcheck { seed, batches, out } => {
            let report = gradsuite::run_suite(seed, batches)?;
            let text = gradcheck_table(&report);
            print!("{text}");
            if let Some(out) = out {
                create_dir(&out)?;
                write_file(&out.join("gradcheck.tsv"), &text)?;
            }
            return Ok(if report.passed() { 0 } else { 1 });
        }
        Command::Ablate {
            config,
            dataset,
            seeds,
            variant,
            out,
        } => {
            let base = match config {
                Some(p) => TrainConfig::read(p)?,
                None => ablation::benchmark_config(),
            };
            let variants: Vec<Variant> = variant.map_or_else(|| ALL_VARIANTS.to_vec(), |v| vec![v]);
            let seeds: Vec<u64> = (0..seeds).collect();
            let rows = match dataset {
                Some(dir) => {
                    let fixed = c3gnn::graphdata::synthetic::Benchmark {
                        train: read_split(&dir, "train")?,
                        val: read_split(&dir, "val")?,
                        test: read_split(&dir, "test")?,
                    };
                    ablation::run_ablation(&base, &variants, &seeds, |_| Ok(fixed.clone()))?
                }
                None => {
                    let spec = ablation::benchmark_spec();
                    ablation::run_ablation(&base, &variants, &seeds, |s| benchmark(&spec, s))?
                }
            };
            let text = ablation::ablation_table(&rows);
            print!("{text}");
            create_dir(&out)?;
            write_file(&out.join("ablation.tsv"), &text)?;
        }
    }
    Ok(0)
}

/// Recluster the training set in the checkpoint's embedding space and report
/// distances on `eval`, whose samples take their nearest subclass.
pub fn analyze_checkpoint(
    params: &EncoderParams,
    cfg: &TrainConfig,
    train: &Dataset,
    eval: &Dataset,
) -> Result<(SubclassAssignment, DistanceReport)> {
    let h = embed_dataset(params, train)?;
    let cap = training_cap(train, cfg)?;
    let assignment = assign_subclasses(
        &h,
        &train.labels(),
        train.num_classes(),
        cap,
        0,
        rng::derive(cfg.seed, &[0xa7]),
    )?;
    let report = analyze(params, &assignment, eval, &train.class_counts())?;
    Ok((assignment, report))
}

pub fn gradcheck_table(report: &gradsuite::SuiteReport) -> String {
    let mut out = String::from("composition\tbatch_seed\tchecked\tmax_rel_error\tpassed\n");
    for r in &report.results {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:e}\t{}",
            r.composition.name(),
            r.batch_seed,
            r.report.checked,
            r.report.max_rel_error,
            r.report.passed
        );
    }
    let _ = writeln!(
        out,
        "# {} in {:.2}s",
        if report.passed() { "pass" } else { "FAIL" },
        report.elapsed.as_secs_f64()
    );
    out
}

fn resolve_config(path: Option<&Path>, seed: Option<u64>, variant: Option<Variant>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::read(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(v) = variant {
        cfg = cfg.for_variant(v);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_source(path: &Path, name: Option<&str>) -> Result<Dataset> {
    if path.is_file() {
        return read_dataset(path);
    }
    let name = match name {
        Some(n) => n.to_string(),
        None => path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::InvalidArgument(format!("cannot infer dataset name from {}", path.display())))?
            .to_string(),
    };
    parse_tu_dataset(path, &name)
}

pub fn split_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.{SPLIT_EXT}"))
}

pub fn read_split(dir: &Path, split: &str) -> Result<Dataset> {
    if !SPLITS.contains(&split) {
        return Err(Error::InvalidArgument(format!("unknown split `{split}`")));
    }
    read_dataset(split_path(dir, split))
}

fn write_splits(out: &Path, parts: [&Dataset; 3]) -> Result<()> {
    create_dir(out)?;
    for (name, d) in SPLITS.iter().zip(parts) {
        write_dataset(d, split_path(out, name))?;
    }
    Ok(())
}

/// `checkpoint.bin`, `history.tsv`, `assignment.tsv` (when clustering ran)
/// and `config.txt`.
pub fn write_training(out: &Path, cfg: &TrainConfig, result: &FitResult) -> Result<()> {
    create_dir(out)?;
    write_checkpoint(&result.params, out.join("checkpoint.bin"))?;
    result.history.write(out.join("history.tsv"))?;
    if let Some(a) = &result.assignment {
        write_file(&out.join("assignment.tsv"), &a.to_table())?;
    }
    write_file(&out.join("config.txt"), &cfg.to_text())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
