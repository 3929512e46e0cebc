//! Command-line surface: generate, train, eval, ablate, explain.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::{read_dataset, synth_generate, write_dataset, Dataset};
use crate::error::{Error, Result};
use crate::explain::{grad_cam, write_saliency_pgms};
use crate::model::CtaNet;
use crate::training::{ablate, evaluate, split_dataset, train, write_confusion_csv};

#[derive(Parser, Debug)]
#[command(
    name = "ctanet",
    about = "Branch-attentive video classifier on a synthetic benchmark"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic video benchmark.
    Generate {
        /// Config file of key = value lines; defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Generation seed; defaults to the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Extra `key=value` overrides applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train a model on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run directory for metrics, checkpoints, and the effective config.
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Report top-1 accuracy of a checkpoint over a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the confusion matrix CSV; skipped when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Shuffle each video's sampled frames before classification.
        #[arg(long)]
        shuffle: bool,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train the 2x2 ablation grid and summarize val/test accuracy.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Write per-branch saliency maps for one video and class.
    Explain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Video index within the dataset.
        #[arg(long)]
        video: usize,
        /// Class whose score is explained.
        #[arg(long)]
        class: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn load_config(path: &Option<PathBuf>, sets: &[String]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for entry in sets {
        let Some((key, value)) = entry.split_once('=') else {
            return Err(Error::Config(format!(
                "--set expects key=value, got `{entry}`"
            )));
        };
        cfg.apply(key.trim(), value.trim())?;
    }
    Ok(cfg)
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("config.effective");
    std::fs::write(&path, cfg.render()).map_err(|e| Error::io(&path, e))
}

/// Builds the model the config describes for the dataset's geometry and
/// class count.
fn build_model(cfg: &RunConfig, dataset: &Dataset, seed: u64) -> Result<CtaNet> {
    let glimpse = cfg.glimpse_config(dataset.image_side, dataset.image_channels);
    let sequence = cfg.sequence_config(dataset.num_classes);
    CtaNet::init(glimpse, sequence, seed)
}

fn frame_count_range(dataset: &Dataset) -> (usize, usize) {
    let mut lo = usize::MAX;
    let mut hi = 0;
    for s in &dataset.samples {
        lo = lo.min(s.frames.len());
        hi = hi.max(s.frames.len());
    }
    (lo, hi)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { spec, seed, out, set } => {
            let cfg = load_config(&spec, &set)?;
            let seed = seed.unwrap_or(cfg.train.seed);
            let dataset = synth_generate(&cfg.synth, seed)?;
            write_dataset(&dataset, &out)?;
            echo_config(&cfg, &out)?;
            let (lo, hi) = frame_count_range(&dataset);
            println!(
                "wrote {} videos ({} classes, {}x{} px, {}-{} frames, seed {}) to {}",
                dataset.len(),
                dataset.num_classes,
                dataset.image_side,
                dataset.image_side,
                lo,
                hi,
                seed,
                out.display()
            );
        }
        Command::Train { data, config, out, set } => {
            let cfg = load_config(&config, &set)?;
            let dataset = read_dataset(&data)?;
            echo_config(&cfg, &out)?;
            let split = split_dataset(&dataset, cfg.train.seed)?;
            let mut model = build_model(&cfg, &dataset, cfg.train.seed)?;
            let report = train(&mut model, &dataset, &split, &cfg.train, &out)?;
            let last = report.metrics.last().expect("at least one epoch");
            println!(
                "trained {} epochs ({} steps): train_loss {:.4} train_acc {:.4} val_acc {:.4}",
                report.metrics.len(),
                report.steps,
                last.train_loss,
                last.train_acc,
                last.val_acc
            );
            println!(
                "best val_acc {:.4} at epoch {}; checkpoints in {}",
                report.best_val_acc,
                report.best_epoch,
                out.display()
            );
        }
        Command::Eval { data, checkpoint, config, out, shuffle, set } => {
            let cfg = load_config(&config, &set)?;
            let dataset = read_dataset(&data)?;
            let mut model = build_model(&cfg, &dataset, 0)?;
            model.load_into(&checkpoint)?;
            let all: Vec<usize> = (0..dataset.len()).collect();
            let report = evaluate(&model, &dataset, &all, &cfg.train, shuffle)?;
            println!(
                "top-1 accuracy {:.4} ({}/{}){}",
                report.accuracy,
                report.correct,
                report.total,
                if shuffle { " with shuffled frames" } else { "" }
            );
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let path = dir.join("confusion.csv");
                write_confusion_csv(&report, &path)?;
                println!("confusion matrix written to {}", path.display());
            }
        }
        Command::Ablate { data, config, out, set } => {
            let cfg = load_config(&config, &set)?;
            let dataset = read_dataset(&data)?;
            echo_config(&cfg, &out)?;
            let glimpse = cfg.glimpse_config(dataset.image_side, dataset.image_channels);
            let sequence = cfg.sequence_config(dataset.num_classes);
            let report = ablate(&dataset, &glimpse, &sequence, &cfg.train, &cfg.seeds, &out)?;
            println!("variant mean accuracy over seeds {:?}:", cfg.seeds);
            for row in &report.rows {
                println!(
                    "  {:<24} val {:.4}  test {:.4}",
                    row.variant, row.val_acc, row.test_acc
                );
            }
            println!("details in {}", report.csv_path.display());
        }
        Command::Explain { data, checkpoint, video, class, config, out, set } => {
            let cfg = load_config(&config, &set)?;
            let dataset = read_dataset(&data)?;
            let mut model = build_model(&cfg, &dataset, 0)?;
            model.load_into(&checkpoint)?;
            let maps = grad_cam(&model, &dataset, video, class, &cfg.train)?;
            let stem = format!("video{video}_class{class}");
            let paths = write_saliency_pgms(&maps, &out, &stem)?;
            for (map, path) in maps.iter().zip(&paths) {
                println!(
                    "branch {} ({} frames): {}",
                    map.branch,
                    map.frames,
                    path.display()
                );
            }
        }
    }
    Ok(())
}
