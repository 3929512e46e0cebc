//! Cross-entropy loss, Adam, the step-decay learning-rate schedule, the
//! uniform frame sampler, seeded dataset splits, and the minibatch training
//! loop with CSV metrics and best-validation checkpointing.

use std::path::{Path, PathBuf};
use std::{fmt::Write as _, fs};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::glimpse::GlimpseConfig;
use crate::model::{AblationSwitches, CtaNet};
use crate::numerics::{Tape, Tensor};
use crate::rng::{streams, SplitMix64};
use crate::sequence::SequenceConfig;

/// Hyperparameters for one training run. Defaults follow the recipe the
/// model was designed around: Adam(0.9, 0.999), lr 0.001 decayed by 0.1
/// every 25 epochs, batches of 4 videos, 12 sampled frames per video.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Multiplier applied to the learning rate every `decay_every` epochs.
    pub decay_factor: f64,
    pub decay_every: usize,
    /// Videos per optimizer step.
    pub batch_size: usize,
    /// Frames sampled from each video; must match the glimpse config.
    pub frames_per_video: usize,
    pub epochs: usize,
    /// Seeds model init, epoch shuffles, jitter, and eval-time shuffling.
    pub seed: u64,
    /// Gradients are rescaled to this global L2 norm when they exceed it.
    pub clip_norm: f64,
    /// When true the frame sampler draws uniformly inside each stratum
    /// instead of taking its left edge.
    pub jitter: bool,
    pub switches: AblationSwitches,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            decay_factor: 0.1,
            decay_every: 25,
            batch_size: 4,
            frames_per_video: 12,
            epochs: 50,
            seed: 0,
            clip_norm: 5.0,
            jitter: false,
            switches: AblationSwitches::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::Config("lr0 must be positive".into()));
        }
        if !(0.0 < self.beta1 && self.beta1 < self.beta2 && self.beta2 < 1.0) {
            return Err(Error::Config(format!(
                "betas must satisfy 0 < beta1 < beta2 < 1, got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "decay_factor must be in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if self.decay_every == 0 {
            return Err(Error::Config("decay_every must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.frames_per_video == 0 {
            return Err(Error::Config("frames_per_video must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate in force during `epoch`: lr0 scaled by
    /// decay_factor^floor(epoch / decay_every).
    ///
    /// Computed as division by the reciprocal's integer power: for the
    /// decade schedule the reciprocal of 0.1 rounds to exactly 10.0 and
    /// x / 10^k is correctly rounded, so the scheduled rates equal their
    /// decimal literals (0.001, 0.0001, ...) bit for bit.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = (epoch / self.decay_every) as i32;
        self.lr0 / (1.0 / self.decay_factor).powi(k)
    }
}

/// Negative log-likelihood of the labeled class, built on the tape so it can
/// seed backward. The probability is clamped to 1e-12 before the log.
pub fn cross_entropy(tape: &Tape, probabilities: &Tensor, label: usize) -> Result<Tensor> {
    let k = probabilities.len();
    if label >= k {
        return Err(Error::Contract(format!(
            "label {label} out of range for {k} classes"
        )));
    }
    let total: f64 = probabilities.data().iter().sum();
    // Negated form so a NaN sum fails the precondition too.
    if !((total - 1.0).abs() <= 1e-6) {
        return Err(Error::Contract(format!(
            "probabilities sum to {total}, expected 1"
        )));
    }
    let p = tape.index(probabilities, label)?;
    let logp = tape.log_clamped(&p, 1e-12)?;
    tape.scale(&logp, -1.0)
}

/// Per-parameter Adam moments plus the shared step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(model: &CtaNet) -> OptimizerState {
        let m: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
        OptimizerState { v: m.clone(), m, step: 0 }
    }

    /// Second moments never go negative; first moments stay finite.
    pub fn is_well_formed(&self) -> bool {
        self.m.iter().flatten().all(|x| x.is_finite())
            && self.v.iter().flatten().all(|x| x.is_finite() && *x >= 0.0)
    }
}

/// One bias-corrected Adam update over every parameter. Zero gradients with
/// zero moments leave parameters untouched; a non-finite gradient aborts
/// naming the parameter.
pub fn adam_step(
    cfg: &TrainConfig,
    params: &mut [&mut crate::params::Param],
    grads: &[Vec<f64>],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "optimizer saw {} parameters, {} gradients, state for {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if !(lr > 0.0) {
        return Err(Error::Contract(format!("learning rate must be positive, got {lr}")));
    }
    for (param, grad) in params.iter().zip(grads) {
        if param.data.len() != grad.len() {
            return Err(Error::Contract(format!(
                "gradient length {} does not match parameter {} of length {}",
                grad.len(),
                param.name,
                param.data.len()
            )));
        }
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient for parameter {}",
                param.name
            )));
        }
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for ((param, grad), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..grad.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            param.data[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Indices of `t` frames drawn uniformly from a video of `video_len` frames:
/// floor(i * L / T). Nondecreasing, the identity when L = T, and repeats
/// frames when L < T.
pub fn sample_frames(video_len: usize, t: usize) -> Result<Vec<usize>> {
    if video_len == 0 {
        return Err(Error::Contract("cannot sample frames from an empty video".into()));
    }
    if t == 0 {
        return Err(Error::Contract("must sample at least one frame".into()));
    }
    Ok((0..t).map(|i| i * video_len / t).collect())
}

/// Jittered variant: one uniform draw inside each stratum
/// [floor(i*L/T), floor((i+1)*L/T)) instead of its left edge. Still
/// nondecreasing; collapsed strata (L < T) fall back to their left edge.
pub fn sample_frames_jittered(
    video_len: usize,
    t: usize,
    rng: &mut SplitMix64,
) -> Result<Vec<usize>> {
    let left = sample_frames(video_len, t)?;
    Ok((0..t)
        .map(|i| {
            let lo = left[i];
            let hi = if i + 1 == t { video_len } else { left[i + 1] };
            if hi > lo {
                lo + rng.next_below((hi - lo) as u64) as usize
            } else {
                lo
            }
        })
        .collect())
}

/// Disjoint video-index sets for one dataset; indices are sorted within
/// each section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified 60/20/20 split: within each class the videos are shuffled by
/// a per-class stream derived from `seed`, then floor(n/5) go to validation,
/// floor(n/5) to test, and the rest to training. Classes with fewer than
/// five videos keep everything in training.
pub fn split_dataset(dataset: &Dataset, seed: u64) -> Result<Split> {
    if dataset.is_empty() {
        return Err(Error::Contract("cannot split an empty dataset".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, sample) in dataset.samples.iter().enumerate() {
        by_class[sample.label].push(i);
    }
    let mut split = Split { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for (class, mut members) in by_class.into_iter().enumerate() {
        let mut rng = SplitMix64::substreams(seed, &[streams::SPLIT, class as u64]);
        rng.shuffle(&mut members);
        let hold = members.len() / 5;
        split.val.extend(&members[..hold]);
        split.test.extend(&members[hold..2 * hold]);
        split.train.extend(&members[2 * hold..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(hash: &mut u64, bytes: &[u8]) {
    for &b in bytes {
        *hash ^= b as u64;
        *hash = hash.wrapping_mul(FNV_PRIME);
    }
}

/// FNV-1a over every label and frame byte; logged so runs that should share
/// data can be checked against each other.
pub fn dataset_hash(dataset: &Dataset) -> u64 {
    let mut hash = FNV_OFFSET;
    fnv1a(&mut hash, &(dataset.image_side as u64).to_le_bytes());
    fnv1a(&mut hash, &(dataset.image_channels as u64).to_le_bytes());
    for sample in &dataset.samples {
        fnv1a(&mut hash, &(sample.label as u64).to_le_bytes());
        for frame in &sample.frames {
            for v in frame {
                fnv1a(&mut hash, &v.to_le_bytes());
            }
        }
    }
    hash
}

/// FNV-1a over the three index sections with distinct separators.
pub fn split_hash(split: &Split) -> u64 {
    let mut hash = FNV_OFFSET;
    for (tag, section) in [(1u8, &split.train), (2, &split.val), (3, &split.test)] {
        fnv1a(&mut hash, &[tag]);
        for &i in section {
            fnv1a(&mut hash, &(i as u64).to_le_bytes());
        }
    }
    hash
}

/// Top-1 accuracy plus the count matrix behind it.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub accuracy: f64,
    /// confusion[true_class][predicted_class] = video count.
    pub confusion: Vec<Vec<usize>>,
    pub correct: usize,
    pub total: usize,
}

/// Classifies the indexed videos with gradient-free forward passes. With
/// `shuffle_frames` the sampled frames of each video are permuted by a
/// per-video stream, destroying temporal order while keeping content.
/// An empty index set reports accuracy 0 over 0 videos.
pub fn evaluate(
    model: &CtaNet,
    dataset: &Dataset,
    indices: &[usize],
    cfg: &TrainConfig,
    shuffle_frames: bool,
) -> Result<EvalReport> {
    let k = dataset.num_classes;
    let mut confusion = vec![vec![0usize; k]; k];
    let mut correct = 0usize;
    for &vid in indices {
        if vid >= dataset.len() {
            return Err(Error::Contract(format!(
                "video index {vid} out of range for dataset of {}",
                dataset.len()
            )));
        }
        let sample = &dataset.samples[vid];
        let tape = Tape::new();
        let bound =
            model.bind_with(&mut |p| tape.constant(p.data.clone(), &p.shape))?;
        let picks = sample_frames(sample.frames.len(), cfg.frames_per_video)?;
        let mut frames = picks
            .iter()
            .map(|&f| dataset.frame_tensor(&tape, vid, f))
            .collect::<Result<Vec<_>>>()?;
        if shuffle_frames {
            SplitMix64::substreams(cfg.seed, &[streams::SHUFFLE_EVAL, vid as u64])
                .shuffle(&mut frames);
        }
        let out = bound.forward_video(&tape, &frames, cfg.switches)?;
        let pred = out.predicted_class();
        confusion[sample.label][pred] += 1;
        if pred == sample.label {
            correct += 1;
        }
    }
    let total = indices.len();
    let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
    Ok(EvalReport { accuracy, confusion, correct, total })
}

/// Writes a confusion matrix as CSV: one row per true class, one column per
/// predicted class, cells are video counts.
pub fn write_confusion_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let k = report.confusion.len();
    let mut text = String::from("true_class");
    for j in 0..k {
        let _ = write!(text, ",pred_{j}");
    }
    text.push('\n');
    for (i, row) in report.confusion.iter().enumerate() {
        let _ = write!(text, "{i}");
        for count in row {
            let _ = write!(text, ",{count}");
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One metrics row; mirrors one line of the metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Cumulative optimizer steps at the end of the epoch.
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

pub const METRICS_HEADER: &str = "epoch,step,lr,train_loss,train_acc,val_acc";

/// Everything a finished run leaves behind. The trained model is the one
/// passed into `train`; `best_model` snapshots the best-validation epoch.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub metrics: Vec<EpochMetrics>,
    pub best_model: CtaNet,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    pub steps: u64,
    pub clip_events: u64,
    pub metrics_path: PathBuf,
    pub best_checkpoint: PathBuf,
    pub final_checkpoint: PathBuf,
}

fn step_context(err: Error, epoch: usize, step: u64) -> Error {
    match err {
        Error::Numeric(msg) => {
            Error::Numeric(format!("{msg} (epoch {epoch}, step {step})"))
        }
        other => other,
    }
}

fn render_metrics(rows: &[EpochMetrics]) -> String {
    let mut text = String::from(METRICS_HEADER);
    text.push('\n');
    for r in rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            r.epoch, r.step, r.lr, r.train_loss, r.train_acc, r.val_acc
        );
    }
    text
}

/// Minibatch training over the split's training videos. Per epoch: shuffled
/// batches, mean per-video loss and running train accuracy, validation
/// accuracy, one metrics row, and a checkpoint refresh when validation
/// improves. Gradients are averaged over the batch and clipped to
/// `clip_norm` (logged when active). A non-finite loss or gradient aborts
/// with the epoch and step in the message.
pub fn train(
    model: &mut CtaNet,
    dataset: &Dataset,
    split: &Split,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainReport> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Contract("training split is empty".into()));
    }
    for &i in split.train.iter().chain(&split.val).chain(&split.test) {
        if i >= dataset.len() {
            return Err(Error::Contract(format!(
                "split references video {i}, dataset has {}",
                dataset.len()
            )));
        }
    }
    let glimpse = &model.glimpse.config;
    if cfg.frames_per_video != glimpse.frames_per_video {
        return Err(Error::Config(format!(
            "config samples {} frames but the model expects {}",
            cfg.frames_per_video, glimpse.frames_per_video
        )));
    }
    if cfg.frames_per_video < glimpse.num_branches {
        return Err(Error::Config(format!(
            "{} frames cannot cover {} branches",
            cfg.frames_per_video, glimpse.num_branches
        )));
    }
    if dataset.image_side != glimpse.image_side
        || dataset.image_channels != glimpse.image_channels
    {
        return Err(Error::Config(format!(
            "dataset frames are {}x{}x{} but the model expects {}x{}x{}",
            dataset.image_channels,
            dataset.image_side,
            dataset.image_side,
            glimpse.image_channels,
            glimpse.image_side,
            glimpse.image_side
        )));
    }
    if dataset.num_classes > model.sequence.config.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but the model only scores {}",
            dataset.num_classes, model.sequence.config.num_classes
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics_path = out_dir.join("metrics.csv");
    let best_checkpoint = out_dir.join("checkpoint_best.ckpt");
    let final_checkpoint = out_dir.join("checkpoint_final.ckpt");
    let log_path = out_dir.join("train.log");
    let mut log = format!(
        "dataset_hash={:016x}\nsplit_hash={:016x} train={} val={} test={}\n",
        dataset_hash(dataset),
        split_hash(split),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );

    let num_params = model.params().len();
    let mut state = OptimizerState::new(model);
    let mut rows: Vec<EpochMetrics> = Vec::with_capacity(cfg.epochs);
    let mut best_model = model.clone();
    let mut best_val_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut steps = 0u64;
    let mut clip_events = 0u64;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut order = split.train.clone();
        SplitMix64::substreams(cfg.seed, &[streams::ORDER, epoch as u64])
            .shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Vec<f64>> =
                model.params().iter().map(|p| vec![0.0; p.len()]).collect();
            for &vid in batch {
                let sample = &dataset.samples[vid];
                let tape = Tape::new();
                let mut leaves: Vec<Tensor> = Vec::with_capacity(num_params);
                let bound = model.bind_with(&mut |p| {
                    let leaf = tape.leaf(p.data.clone(), &p.shape)?;
                    leaves.push(leaf.clone());
                    Ok(leaf)
                })?;
                let picks = if cfg.jitter {
                    let mut jitter_rng = SplitMix64::substreams(
                        cfg.seed,
                        &[streams::ORDER, epoch as u64, vid as u64],
                    );
                    sample_frames_jittered(
                        sample.frames.len(),
                        cfg.frames_per_video,
                        &mut jitter_rng,
                    )?
                } else {
                    sample_frames(sample.frames.len(), cfg.frames_per_video)?
                };
                let frames = picks
                    .iter()
                    .map(|&f| dataset.frame_tensor(&tape, vid, f))
                    .collect::<Result<Vec<_>>>()?;
                let out = bound
                    .forward_video(&tape, &frames, cfg.switches)
                    .map_err(|e| step_context(e, epoch, steps + 1))?;
                if !out.probabilities.all_finite() {
                    return Err(Error::Numeric(format!(
                        "loss diverged (epoch {epoch}, step {})",
                        steps + 1
                    )));
                }
                let loss = cross_entropy(&tape, &out.probabilities, sample.label)?;
                let loss_value = loss.item()?;
                if !loss_value.is_finite() {
                    return Err(Error::Numeric(format!(
                        "loss diverged (epoch {epoch}, step {})",
                        steps + 1
                    )));
                }
                let scaled = tape.scale(&loss, 1.0 / batch.len() as f64)?;
                tape.backward(&scaled)
                    .map_err(|e| step_context(e, epoch, steps + 1))?;
                loss_sum += loss_value;
                if out.predicted_class() == sample.label {
                    correct += 1;
                }
                for (acc, leaf) in grads.iter_mut().zip(&leaves) {
                    for (a, g) in acc.iter_mut().zip(leaf.grad()?) {
                        *a += g;
                    }
                }
            }
            let norm = grads
                .iter()
                .flatten()
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt();
            if norm > cfg.clip_norm {
                let rescale = cfg.clip_norm / norm;
                for g in grads.iter_mut().flatten() {
                    *g *= rescale;
                }
                clip_events += 1;
                let _ = writeln!(
                    log,
                    "clip epoch={epoch} step={} norm={norm} limit={}",
                    steps + 1,
                    cfg.clip_norm
                );
            }
            let mut params = model.params_mut();
            adam_step(cfg, &mut params, &grads, &mut state, lr)
                .map_err(|e| step_context(e, epoch, steps + 1))?;
            steps += 1;
        }
        let train_loss = loss_sum / order.len() as f64;
        let train_acc = correct as f64 / order.len() as f64;
        let val = evaluate(model, dataset, &split.val, cfg, false)?;
        rows.push(EpochMetrics {
            epoch,
            step: steps,
            lr,
            train_loss,
            train_acc,
            val_acc: val.accuracy,
        });
        fs::write(&metrics_path, render_metrics(&rows))
            .map_err(|e| Error::io(&metrics_path, e))?;
        if val.accuracy > best_val_acc {
            best_val_acc = val.accuracy;
            best_epoch = epoch;
            best_model = model.clone();
            best_model.save(&best_checkpoint)?;
        }
    }
    model.save(&final_checkpoint)?;
    fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;
    Ok(TrainReport {
        metrics: rows,
        best_model,
        best_val_acc,
        best_epoch,
        steps,
        clip_events,
        metrics_path,
        best_checkpoint,
        final_checkpoint,
    })
}

/// Accuracies of one trained grid variant.
#[derive(Debug, Clone)]
pub struct AblationRun {
    pub variant: &'static str,
    pub seed: u64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub shuffled_test_acc: f64,
    pub test_confusion: Vec<Vec<usize>>,
    pub shuffled_confusion: Vec<Vec<usize>>,
}

/// Mean accuracies per variant over the shared seeds.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: &'static str,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub runs: Vec<AblationRun>,
    pub csv_path: PathBuf,
}

/// Trains the 2x2 grid {branches on/off} x {temporal attention on/off},
/// every variant and seed on the identical split, and summarizes mean
/// validation/test accuracy per variant. Test metrics come from each run's
/// best-validation model; a frame-shuffled test pass is recorded alongside.
pub fn ablate(
    dataset: &Dataset,
    glimpse: &GlimpseConfig,
    sequence: &SequenceConfig,
    cfg: &TrainConfig,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Contract("ablation needs at least one seed".into()));
    }
    let split = split_dataset(dataset, cfg.seed)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rows = Vec::with_capacity(4);
    let mut runs = Vec::new();
    for switches in AblationSwitches::grid() {
        let variant = switches.tag();
        let mut val_sum = 0.0;
        let mut test_sum = 0.0;
        for &seed in seeds {
            let run_dir = out_dir.join(format!("{variant}_seed{seed}"));
            let run_cfg = TrainConfig { seed, switches, ..*cfg };
            let mut model = CtaNet::init(glimpse.clone(), sequence.clone(), seed)?;
            let report = train(&mut model, dataset, &split, &run_cfg, &run_dir)?;
            let test = evaluate(&report.best_model, dataset, &split.test, &run_cfg, false)?;
            let shuffled =
                evaluate(&report.best_model, dataset, &split.test, &run_cfg, true)?;
            write_confusion_csv(&test, &run_dir.join("confusion_test.csv"))?;
            write_confusion_csv(&shuffled, &run_dir.join("confusion_test_shuffled.csv"))?;
            val_sum += report.best_val_acc;
            test_sum += test.accuracy;
            runs.push(AblationRun {
                variant,
                seed,
                val_acc: report.best_val_acc,
                test_acc: test.accuracy,
                shuffled_test_acc: shuffled.accuracy,
                test_confusion: test.confusion,
                shuffled_confusion: shuffled.confusion,
            });
        }
        rows.push(AblationRow {
            variant,
            val_acc: val_sum / seeds.len() as f64,
            test_acc: test_sum / seeds.len() as f64,
        });
    }
    let csv_path = out_dir.join("ablation.csv");
    let mut text = String::from("variant,val_acc,test_acc\n");
    for row in &rows {
        let _ = writeln!(text, "{},{},{}", row.variant, row.val_acc, row.test_acc);
    }
    fs::write(&csv_path, &text).map_err(|e| Error::io(&csv_path, e))?;
    let mut runs_text = String::from("variant,seed,val_acc,test_acc,shuffled_test_acc\n");
    for run in &runs {
        let _ = writeln!(
            runs_text,
            "{},{},{},{},{}",
            run.variant, run.seed, run.val_acc, run.test_acc, run.shuffled_test_acc
        );
    }
    let runs_path = out_dir.join("runs.csv");
    fs::write(&runs_path, &runs_text).map_err(|e| Error::io(&runs_path, e))?;
    Ok(AblationReport { rows, runs, csv_path })
}
