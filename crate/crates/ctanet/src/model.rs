//! The full video classifier: a glimpse sensor applied to every frame and a
//! recurrent sequence head over the resulting feature vectors.

use std::path::Path;

use crate::error::{Error, Result};
use crate::glimpse::{BoundGlimpse, FrameGlimpse, GlimpseConfig, GlimpseModel, GlimpseSwitches};
use crate::numerics::{load_checkpoint, save_checkpoint, CheckpointEntry, Tape, Tensor};
use crate::params::Param;
use crate::rng::{streams, SplitMix64};
use crate::sequence::{BoundSequence, SequenceConfig, SequenceModel, SequenceOutput};

/// Which model pieces to run; the ablation grid toggles these.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationSwitches {
    /// When false, every frame is routed through branch 0.
    pub use_branches: bool,
    /// When false, hidden states are mean-pooled without pair attention.
    pub use_temporal_attention: bool,
    /// When false, the in-branch spatial attention mix is skipped entirely.
    pub use_self_attention: bool,
}

impl Default for AblationSwitches {
    fn default() -> Self {
        AblationSwitches {
            use_branches: true,
            use_temporal_attention: true,
            use_self_attention: true,
        }
    }
}

impl AblationSwitches {
    /// Short stable tag used in file names and report rows.
    pub fn tag(&self) -> &'static str {
        match (self.use_branches, self.use_temporal_attention, self.use_self_attention) {
            (true, true, true) => "full",
            (true, false, true) => "no_temporal_attention",
            (false, true, true) => "no_branches",
            (false, false, true) => "neither",
            (true, true, false) => "no_self_attention",
            (true, false, false) => "no_temporal_attention_no_self_attention",
            (false, true, false) => "no_branches_no_self_attention",
            (false, false, false) => "none",
        }
    }

    /// The four corners of the 2x2 ablation grid (branches x temporal
    /// attention), full model first; spatial self-attention stays on.
    pub fn grid() -> [AblationSwitches; 4] {
        let on = AblationSwitches::default();
        [
            on,
            AblationSwitches { use_temporal_attention: false, ..on },
            AblationSwitches { use_branches: false, ..on },
            AblationSwitches { use_branches: false, use_temporal_attention: false, ..on },
        ]
    }
}

#[derive(Debug, Clone)]
pub struct CtaNet {
    pub glimpse: GlimpseModel,
    pub sequence: SequenceModel,
}

impl CtaNet {
    /// Initializes both halves from one derived stream. The sequence input
    /// width must equal the glimpse feature width.
    pub fn init(glimpse: GlimpseConfig, sequence: SequenceConfig, seed: u64) -> Result<CtaNet> {
        if sequence.input_width != glimpse.feature_width() {
            return Err(Error::Config(format!(
                "sequence input width {} does not match glimpse feature width {}",
                sequence.input_width,
                glimpse.feature_width()
            )));
        }
        let mut rng = SplitMix64::substream(seed, streams::INIT);
        Ok(CtaNet {
            glimpse: GlimpseModel::init(glimpse, &mut rng)?,
            sequence: SequenceModel::init(sequence, &mut rng)?,
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.glimpse.params();
        out.extend(self.sequence.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.glimpse.params_mut();
        out.extend(self.sequence.params_mut());
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn bind(&self, tape: &Tape) -> Result<BoundNet> {
        self.bind_with(&mut |p: &Param| p.bind(tape))
    }

    /// Like `bind`, but `next` supplies the tensor for each parameter, in
    /// `params()` order.
    pub fn bind_with(&self, next: &mut dyn FnMut(&Param) -> Result<Tensor>) -> Result<BoundNet> {
        Ok(BoundNet {
            glimpse: self.glimpse.bind_with(next)?,
            sequence: self.sequence.bind_with(next)?,
        })
    }

    pub fn to_entries(&self) -> Vec<CheckpointEntry> {
        self.params().iter().map(|p| p.to_entry()).collect()
    }

    /// Installs checkpoint entries into this model. Every parameter must be
    /// present with its exact shape and no unknown entries may remain; the
    /// first offending name is reported.
    pub fn load_entries(&mut self, entries: &[CheckpointEntry]) -> Result<()> {
        use std::collections::BTreeMap;
        let mut by_name: BTreeMap<&str, &CheckpointEntry> = BTreeMap::new();
        for e in entries {
            if by_name.insert(e.name.as_str(), e).is_some() {
                return Err(Error::Format(format!(
                    "checkpoint lists parameter `{}` twice",
                    e.name
                )));
            }
        }
        for p in self.params_mut() {
            let entry = by_name.remove(p.name.as_str()).ok_or_else(|| {
                Error::Format(format!("checkpoint is missing parameter `{}`", p.name))
            })?;
            if entry.shape != p.shape {
                return Err(Error::Format(format!(
                    "checkpoint parameter `{}` has shape {:?}, model expects {:?}",
                    p.name, entry.shape, p.shape
                )));
            }
            p.data.clone_from(&entry.data);
        }
        if let Some((name, _)) = by_name.into_iter().next() {
            return Err(Error::Format(format!(
                "checkpoint has parameter `{name}` unknown to this architecture"
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.to_entries())
    }

    pub fn load_into(&mut self, path: &Path) -> Result<()> {
        let entries = load_checkpoint(path)?;
        self.load_entries(&entries)
    }
}

#[derive(Debug, Clone)]
pub struct BoundNet {
    pub glimpse: BoundGlimpse,
    pub sequence: BoundSequence,
}

#[derive(Debug, Clone)]
pub struct VideoOutput {
    /// Class probabilities, shape [K].
    pub probabilities: Tensor,
    /// Per-frame glimpse results in temporal order.
    pub frames: Vec<FrameGlimpse>,
    pub sequence: SequenceOutput,
}

impl VideoOutput {
    pub fn predicted_class(&self) -> usize {
        let probs = self.probabilities.data();
        let mut best = 0;
        for (k, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = k;
            }
        }
        best
    }
}

impl BoundNet {
    /// Classifies one video given as frames in temporal order. The frame
    /// count must match the configured frames per video.
    pub fn forward_video(
        &self,
        tape: &Tape,
        frames: &[Tensor],
        switches: AblationSwitches,
    ) -> Result<VideoOutput> {
        let want = self.glimpse.config.frames_per_video;
        if frames.len() != want {
            return Err(Error::Contract(format!(
                "expected {want} frames per video, got {}",
                frames.len()
            )));
        }
        let glimpse_switches = GlimpseSwitches {
            use_branches: switches.use_branches,
            use_self_attention: switches.use_self_attention,
        };
        let mut frame_outputs = Vec::with_capacity(frames.len());
        for (t, frame) in frames.iter().enumerate() {
            frame_outputs.push(self.glimpse.forward_frame(tape, frame, t, glimpse_switches)?);
        }
        let features: Vec<Tensor> = frame_outputs.iter().map(|f| f.features.clone()).collect();
        let sequence =
            self.sequence
                .forward_video(tape, &features, switches.use_temporal_attention)?;
        Ok(VideoOutput {
            probabilities: sequence.probabilities.clone(),
            frames: frame_outputs,
            sequence,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glimpse::ConvStage;
    use crate::numerics::grad_check;

    /// Micro geometry small enough for finite differences.
    pub(crate) fn micro_configs() -> (GlimpseConfig, SequenceConfig) {
        let glimpse = GlimpseConfig {
            image_side: 16,
            image_channels: 1,
            frames_per_video: 6,
            num_branches: 3,
            trunk: vec![ConvStage { out_channels: 8, kernel: 3, stride: 2, padding: 0 }],
            head: ConvStage { out_channels: 8, kernel: 3, stride: 2, padding: 0 },
            qk_channels: 0,
        };
        let sequence = SequenceConfig {
            input_width: 8,
            hidden_width: 4,
            num_classes: 2,
            vector_gate: false,
        };
        (glimpse, sequence)
    }

    fn random_frames(tape: &Tape, count: usize, side: usize, rng: &mut SplitMix64) -> Vec<Tensor> {
        (0..count)
            .map(|_| {
                tape.constant(
                    (0..side * side).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                    &[1, side, side],
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn init_rejects_width_mismatch() {
        let (glimpse, mut sequence) = micro_configs();
        sequence.input_width = 7;
        assert!(matches!(CtaNet::init(glimpse, sequence, 1), Err(Error::Config(_))));
    }

    #[test]
    fn forward_yields_probabilities_over_classes() {
        let (glimpse, sequence) = micro_configs();
        let model = CtaNet::init(glimpse, sequence, 3).unwrap();
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let mut rng = SplitMix64::new(4);
        let frames = random_frames(&tape, 6, 16, &mut rng);
        let out = bound.forward_video(&tape, &frames, AblationSwitches::default()).unwrap();
        assert_eq!(out.probabilities.shape(), &[2]);
        let sum: f64 = out.probabilities.data().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9);
        assert_eq!(out.frames.len(), 6);
        assert!(out.predicted_class() < 2);
    }

    #[test]
    fn forward_rejects_wrong_frame_count() {
        let (glimpse, sequence) = micro_configs();
        let model = CtaNet::init(glimpse, sequence, 3).unwrap();
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let mut rng = SplitMix64::new(4);
        let frames = random_frames(&tape, 5, 16, &mut rng);
        assert!(matches!(
            bound.forward_video(&tape, &frames, AblationSwitches::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn parameter_names_are_unique() {
        let (glimpse, sequence) = micro_configs();
        let model = CtaNet::init(glimpse, sequence, 5).unwrap();
        let mut names: Vec<&str> = model.params().iter().map(|p| p.name.as_str()).collect();
        let before = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), before);
    }

    #[test]
    fn checkpoint_round_trip_preserves_forward_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (glimpse, sequence) = micro_configs();
        let model = CtaNet::init(glimpse.clone(), sequence.clone(), 11).unwrap();
        model.save(&path).unwrap();
        let mut other = CtaNet::init(glimpse, sequence, 999).unwrap();
        other.load_into(&path).unwrap();

        let mut rng = SplitMix64::new(12);
        let frame_data: Vec<Vec<f64>> =
            (0..6).map(|_| (0..256).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
        let run = |m: &CtaNet| -> Vec<f64> {
            let tape = Tape::new();
            let bound = m.bind(&tape).unwrap();
            let frames: Vec<Tensor> = frame_data
                .iter()
                .map(|d| tape.constant(d.clone(), &[1, 16, 16]).unwrap())
                .collect();
            bound
                .forward_video(&tape, &frames, AblationSwitches::default())
                .unwrap()
                .probabilities
                .data()
                .to_vec()
        };
        let (a, b) = (run(&model), run(&other));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn checkpoint_mismatches_name_the_offender() {
        let (glimpse, sequence) = micro_configs();
        let mut model = CtaNet::init(glimpse, sequence, 11).unwrap();
        let mut entries = model.to_entries();

        let mut missing = entries.clone();
        missing.remove(0);
        let err = model.load_entries(&missing).unwrap_err();
        assert!(err.to_string().contains("glimpse.trunk0.kernel"), "{err}");

        let mut renamed = entries.clone();
        renamed[0].name = "glimpse.trunk9.kernel".into();
        let err = model.load_entries(&renamed).unwrap_err();
        assert!(err.to_string().contains("glimpse.trunk0.kernel"), "{err}");

        let mut reshaped = entries.clone();
        reshaped[3].shape = vec![1];
        reshaped[3].data = vec![0.0];
        let err = model.load_entries(&reshaped).unwrap_err();
        assert!(err.to_string().contains(&entries[3].name), "{err}");

        entries.push(CheckpointEntry { name: "extra.param".into(), shape: vec![1], data: vec![0.0] });
        let err = model.load_entries(&entries).unwrap_err();
        assert!(err.to_string().contains("extra.param"), "{err}");
    }

    #[test]
    fn seeds_control_initialization() {
        let (glimpse, sequence) = micro_configs();
        let a = CtaNet::init(glimpse.clone(), sequence.clone(), 7).unwrap();
        let b = CtaNet::init(glimpse.clone(), sequence.clone(), 7).unwrap();
        let c = CtaNet::init(glimpse, sequence, 8).unwrap();
        for (x, y) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(x.data, y.data);
        }
        assert!(a.params().iter().zip(c.params().iter()).any(|(x, y)| x.data != y.data));
    }

    #[test]
    fn gradients_accumulate_over_frames_into_shared_trunk() {
        let (glimpse, sequence) = micro_configs();
        let model = CtaNet::init(glimpse, sequence, 21).unwrap();
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let mut rng = SplitMix64::new(22);
        let frames = random_frames(&tape, 6, 16, &mut rng);
        let out = bound.forward_video(&tape, &frames, AblationSwitches::default()).unwrap();
        let loss = tape
            .scale(
                &tape
                    .log_clamped(&tape.index(&out.probabilities, 0).unwrap(), 1e-12)
                    .unwrap(),
                -1.0,
            )
            .unwrap();
        tape.backward(&loss).unwrap();
        let g = bound.glimpse.trunk[0].kernel.grad().unwrap();
        assert!(g.iter().any(|&v| v != 0.0));
        // All three branch heads saw frames, so all receive gradient.
        for branch in &bound.glimpse.branches {
            let gh = branch.head.kernel.grad().unwrap();
            assert!(gh.iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn spot_checked_parameters_pass_central_differences() {
        let (glimpse, sequence) = micro_configs();
        let model = CtaNet::init(glimpse, sequence, 31).unwrap();
        let mut rng = SplitMix64::new(32);
        let frame_data: Vec<Vec<f64>> =
            (0..6).map(|_| (0..256).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
        let names = ["glimpse.trunk0.kernel", "glimpse.branch0.gamma", "tattn.w_psi", "cls.w"];
        for name in names {
            let which = model.params().iter().position(|p| p.name == name).unwrap();
            let param = model.params()[which].clone();
            let f = |tape: &Tape, probe: &Tensor| -> Result<Tensor> {
                let mut idx = 0;
                let bound = model.bind_with(&mut |p: &Param| {
                    let t = if idx == which {
                        tape.reshape(probe, &p.shape)
                    } else {
                        tape.constant(p.data.clone(), &p.shape)
                    };
                    idx += 1;
                    t
                })?;
                let frames: Vec<Tensor> = frame_data
                    .iter()
                    .map(|d| tape.constant(d.clone(), &[1, 16, 16]))
                    .collect::<Result<_>>()?;
                let out = bound.forward_video(tape, &frames, AblationSwitches::default())?;
                let p = tape.index(&out.probabilities, 1)?;
                tape.scale(&tape.log_clamped(&p, 1e-12)?, -1.0)
            };
            let report = grad_check(&f, &param.data, &param.shape, 1e-5).unwrap();
            assert!(
                report.max_rel_err <= 1e-5,
                "param {name} rel err {}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn ablation_grid_has_four_distinct_corners() {
        let tags: Vec<&str> = AblationSwitches::grid().iter().map(|s| s.tag()).collect();
        assert_eq!(tags, vec!["full", "no_temporal_attention", "no_branches", "neither"]);
        assert_eq!(AblationSwitches::grid()[0], AblationSwitches::default());
    }

    #[test]
    fn branch_ablation_changes_routing_not_shape() {
        let (glimpse, sequence) = micro_configs();
        let model = CtaNet::init(glimpse, sequence, 41).unwrap();
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let mut rng = SplitMix64::new(42);
        let frames = random_frames(&tape, 6, 16, &mut rng);
        let out = bound
            .forward_video(
                &tape,
                &frames,
                AblationSwitches { use_branches: false, ..AblationSwitches::default() },
            )
            .unwrap();
        assert!(out.frames.iter().all(|f| f.branch == 0));
        assert_eq!(out.probabilities.shape(), &[2]);
    }

    #[test]
    fn mean_pool_ablation_drops_pair_machinery() {
        let (glimpse, sequence) = micro_configs();
        let model = CtaNet::init(glimpse, sequence, 51).unwrap();
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let mut rng = SplitMix64::new(52);
        let frames = random_frames(&tape, 6, 16, &mut rng);
        let out = bound
            .forward_video(
                &tape,
                &frames,
                AblationSwitches { use_temporal_attention: false, ..AblationSwitches::default() },
            )
            .unwrap();
        assert!(out.sequence.pool_weights.is_none());
        assert!(out.sequence.gates.is_none());
    }
}
