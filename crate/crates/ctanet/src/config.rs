//! Run configuration: one flat key = value file covering dataset synthesis,
//! model geometry, and training hyperparameters. Every key has a default,
//! unknown keys are rejected, and `render` echoes the effective values in a
//! form `parse` accepts back.

use std::path::Path;

use crate::data::SynthSpec;
use crate::error::{Error, Result};
use crate::glimpse::{ConvStage, GlimpseConfig};
use crate::sequence::SequenceConfig;
use crate::training::TrainConfig;

/// Union of everything a command needs; commands pick the parts they use.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub synth: SynthSpec,
    pub num_branches: usize,
    /// 0 means derive as channels / 8.
    pub qk_channels: usize,
    pub trunk: Vec<ConvStage>,
    pub head: ConvStage,
    pub hidden_width: usize,
    pub vector_gate: bool,
    pub train: TrainConfig,
    /// Seeds the ablation grid trains with.
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let glimpse = GlimpseConfig::default();
        RunConfig {
            synth: SynthSpec::default(),
            num_branches: glimpse.num_branches,
            qk_channels: glimpse.qk_channels,
            trunk: glimpse.trunk,
            head: glimpse.head,
            hidden_width: 64,
            vector_gate: false,
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2],
        }
    }
}

fn bad_value(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value `{value}` for config key `{key}`"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| bad_value(key, value))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad_value(key, value)),
    }
}

/// One conv stage as `<out>x<kernel>s<stride>` with an optional `p<padding>`
/// suffix, e.g. `8x5s3` or `16x3s2p1`.
fn parse_stage(key: &str, text: &str) -> Result<ConvStage> {
    let err = || bad_value(key, text);
    let s = text.trim();
    let (out, rest) = s.split_once('x').ok_or_else(err)?;
    let (kernel, rest) = rest.split_once('s').ok_or_else(err)?;
    let (stride, padding) = match rest.split_once('p') {
        Some((stride, pad)) => (stride, pad.parse().map_err(|_| err())?),
        None => (rest, 0),
    };
    Ok(ConvStage {
        out_channels: out.parse().map_err(|_| err())?,
        kernel: kernel.parse().map_err(|_| err())?,
        stride: stride.parse().map_err(|_| err())?,
        padding,
    })
}

fn render_stage(stage: &ConvStage) -> String {
    let mut s = format!("{}x{}s{}", stage.out_channels, stage.kernel, stage.stride);
    if stage.padding != 0 {
        s.push_str(&format!("p{}", stage.padding));
    }
    s
}

impl RunConfig {
    /// Applies one key/value pair; unknown keys and malformed values are
    /// config errors naming the key.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "num_classes" => self.synth.num_classes = parse_num(key, value)?,
            "videos_per_class" => self.synth.videos_per_class = parse_num(key, value)?,
            "min_frames" => self.synth.min_frames = parse_num(key, value)?,
            "max_frames" => self.synth.max_frames = parse_num(key, value)?,
            "image_side" => self.synth.image_side = parse_num(key, value)?,
            "noise_amplitude" => self.synth.noise_amplitude = parse_num(key, value)?,
            "num_branches" => self.num_branches = parse_num(key, value)?,
            "qk_channels" => self.qk_channels = parse_num(key, value)?,
            "trunk" => {
                let stages = value
                    .split(',')
                    .map(|s| parse_stage(key, s))
                    .collect::<Result<Vec<_>>>()?;
                if stages.is_empty() {
                    return Err(bad_value(key, value));
                }
                self.trunk = stages;
            }
            "head" => self.head = parse_stage(key, value)?,
            "hidden_width" => self.hidden_width = parse_num(key, value)?,
            "vector_gate" => self.vector_gate = parse_bool(key, value)?,
            "lr0" => self.train.lr0 = parse_num(key, value)?,
            "beta1" => self.train.beta1 = parse_num(key, value)?,
            "beta2" => self.train.beta2 = parse_num(key, value)?,
            "adam_eps" => self.train.adam_eps = parse_num(key, value)?,
            "decay_factor" => self.train.decay_factor = parse_num(key, value)?,
            "decay_every" => self.train.decay_every = parse_num(key, value)?,
            "batch_size" => self.train.batch_size = parse_num(key, value)?,
            "frames_per_video" => self.train.frames_per_video = parse_num(key, value)?,
            "epochs" => self.train.epochs = parse_num(key, value)?,
            "seed" => self.train.seed = parse_num(key, value)?,
            "clip_norm" => self.train.clip_norm = parse_num(key, value)?,
            "jitter" => self.train.jitter = parse_bool(key, value)?,
            "use_branches" => self.train.switches.use_branches = parse_bool(key, value)?,
            "use_temporal_attention" => {
                self.train.switches.use_temporal_attention = parse_bool(key, value)?
            }
            "use_self_attention" => {
                self.train.switches.use_self_attention = parse_bool(key, value)?
            }
            "seeds" => {
                let seeds = value
                    .split(',')
                    .map(|s| parse_num(key, s))
                    .collect::<Result<Vec<u64>>>()?;
                if seeds.is_empty() {
                    return Err(bad_value(key, value));
                }
                self.seeds = seeds;
            }
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; later lines override earlier ones. Blank
    /// lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (number, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "config line {} is not `key = value`: `{raw}`",
                    number + 1
                )));
            };
            cfg.apply(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    /// Every key with its effective value, one per line; `parse` accepts the
    /// output unchanged.
    pub fn render(&self) -> String {
        let trunk = self
            .trunk
            .iter()
            .map(render_stage)
            .collect::<Vec<_>>()
            .join(",");
        let seeds = self
            .seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "num_classes = {}\n\
             videos_per_class = {}\n\
             min_frames = {}\n\
             max_frames = {}\n\
             image_side = {}\n\
             noise_amplitude = {}\n\
             num_branches = {}\n\
             qk_channels = {}\n\
             trunk = {}\n\
             head = {}\n\
             hidden_width = {}\n\
             vector_gate = {}\n\
             lr0 = {}\n\
             beta1 = {}\n\
             beta2 = {}\n\
             adam_eps = {}\n\
             decay_factor = {}\n\
             decay_every = {}\n\
             batch_size = {}\n\
             frames_per_video = {}\n\
             epochs = {}\n\
             seed = {}\n\
             clip_norm = {}\n\
             jitter = {}\n\
             use_branches = {}\n\
             use_temporal_attention = {}\n\
             use_self_attention = {}\n\
             seeds = {}\n",
            self.synth.num_classes,
            self.synth.videos_per_class,
            self.synth.min_frames,
            self.synth.max_frames,
            self.synth.image_side,
            self.synth.noise_amplitude,
            self.num_branches,
            self.qk_channels,
            trunk,
            render_stage(&self.head),
            self.hidden_width,
            self.vector_gate,
            self.train.lr0,
            self.train.beta1,
            self.train.beta2,
            self.train.adam_eps,
            self.train.decay_factor,
            self.train.decay_every,
            self.train.batch_size,
            self.train.frames_per_video,
            self.train.epochs,
            self.train.seed,
            self.train.clip_norm,
            self.train.jitter,
            self.train.switches.use_branches,
            self.train.switches.use_temporal_attention,
            self.train.switches.use_self_attention,
            seeds,
        )
    }

    /// Glimpse geometry for frames of the given shape.
    pub fn glimpse_config(&self, image_side: usize, image_channels: usize) -> GlimpseConfig {
        GlimpseConfig {
            image_side,
            image_channels,
            frames_per_video: self.train.frames_per_video,
            num_branches: self.num_branches,
            trunk: self.trunk.clone(),
            head: self.head,
            qk_channels: self.qk_channels,
        }
    }

    /// Sequence head sized to the glimpse feature width.
    pub fn sequence_config(&self, num_classes: usize) -> SequenceConfig {
        SequenceConfig {
            input_width: self.head.out_channels,
            hidden_width: self.hidden_width,
            num_classes,
            vector_gate: self.vector_gate,
        }
    }
}
