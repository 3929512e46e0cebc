//! Glimpse sensor: a shared convolutional trunk, coarse temporal routing of
//! frames into branches, per-branch self-attention with a zero-initialized
//! residual scalar, and a per-branch head pooled to the frame feature vector.

use crate::error::{Error, Result};
use crate::numerics::{Reduction, Tape, Tensor};
use crate::params::Param;
use crate::rng::SplitMix64;

/// One convolution stage: `out_channels` square kernels of side `kernel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvStage {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvStage {
    /// Spatial side after applying this stage to `side`, or an error if the
    /// kernel does not fit.
    fn out_side(&self, side: usize) -> Result<usize> {
        if self.out_channels == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(Error::Config(format!(
                "conv stage must have positive channels, kernel and stride, got {self:?}"
            )));
        }
        let padded = side + 2 * self.padding;
        if self.kernel > padded {
            return Err(Error::Config(format!(
                "conv stage kernel {} exceeds padded input side {padded}",
                self.kernel
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlimpseConfig {
    pub image_side: usize,
    pub image_channels: usize,
    pub frames_per_video: usize,
    pub num_branches: usize,
    /// Stages shared by every frame, applied in order.
    pub trunk: Vec<ConvStage>,
    /// Per-branch stage applied after self-attention.
    pub head: ConvStage,
    /// Query/key channel width inside self-attention; 0 selects C/8.
    pub qk_channels: usize,
}

impl Default for GlimpseConfig {
    fn default() -> Self {
        GlimpseConfig {
            image_side: 64,
            image_channels: 1,
            frames_per_video: 12,
            num_branches: 3,
            trunk: vec![
                ConvStage { out_channels: 8, kernel: 5, stride: 3, padding: 0 },
                ConvStage { out_channels: 16, kernel: 3, stride: 2, padding: 0 },
                ConvStage { out_channels: 32, kernel: 3, stride: 2, padding: 0 },
            ],
            head: ConvStage { out_channels: 128, kernel: 3, stride: 1, padding: 0 },
            qk_channels: 0,
        }
    }
}

impl GlimpseConfig {
    /// Channel count and spatial side of the trunk output.
    pub fn trunk_output(&self) -> Result<(usize, usize)> {
        if self.trunk.is_empty() {
            return Err(Error::Config("trunk must have at least one stage".into()));
        }
        let mut side = self.image_side;
        for stage in &self.trunk {
            side = stage.out_side(side)?;
        }
        Ok((self.trunk.last().unwrap().out_channels, side))
    }

    /// Query/key channel width after applying the C/8 default.
    pub fn resolved_qk_channels(&self) -> Result<usize> {
        let (c, _) = self.trunk_output()?;
        if c < 8 {
            return Err(Error::Config(format!(
                "self-attention needs at least 8 trunk output channels for the \
                 query/key reduction, got {c}"
            )));
        }
        let qk = if self.qk_channels == 0 { c / 8 } else { self.qk_channels };
        if qk > c {
            return Err(Error::Config(format!(
                "qk_channels {qk} exceeds trunk output channels {c}"
            )));
        }
        Ok(qk)
    }

    /// Width D of the pooled per-frame feature vector.
    pub fn feature_width(&self) -> usize {
        self.head.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_side == 0 || self.image_channels == 0 {
            return Err(Error::Config(
                "image side and channel count must be at least 1".into(),
            ));
        }
        if self.frames_per_video == 0 {
            return Err(Error::Config("frames_per_video must be at least 1".into()));
        }
        if self.num_branches == 0 {
            return Err(Error::Config("num_branches must be at least 1".into()));
        }
        let (_, side) = self.trunk_output()?;
        self.resolved_qk_channels()?;
        let head_side = self.head.out_side(side)?;
        if head_side == 0 {
            return Err(Error::Config("head output has no spatial extent".into()));
        }
        Ok(())
    }
}

/// Branch index for frame `t` of `total` frames split over `branches`
/// contiguous, ordered segments; the last branch absorbs any remainder.
pub fn assign_branch(t: usize, total: usize, branches: usize) -> Result<usize> {
    if total == 0 || branches == 0 {
        return Err(Error::Config(
            "frame count and branch count must be at least 1".into(),
        ));
    }
    if t >= total {
        return Err(Error::Contract(format!(
            "frame index {t} out of range for {total} frames"
        )));
    }
    Ok((t * branches / total).min(branches - 1))
}

#[derive(Debug, Clone)]
pub struct ConvParams {
    pub kernel: Param,
    pub bias: Param,
}

#[derive(Debug, Clone)]
pub struct BranchParams {
    pub query: Param,
    pub key: Param,
    pub value: Param,
    pub gamma: Param,
    pub head: ConvParams,
}

#[derive(Debug, Clone)]
pub struct GlimpseModel {
    pub config: GlimpseConfig,
    pub trunk: Vec<ConvParams>,
    pub branches: Vec<BranchParams>,
}

fn conv_scale(c_in: usize, k: usize) -> f64 {
    1.0 / ((c_in * k * k) as f64).sqrt()
}

impl GlimpseModel {
    /// Kernels uniform in ±1/√fan_in, biases zero, every residual scalar γ
    /// exactly zero. Branch parameters are drawn independently per branch.
    pub fn init(config: GlimpseConfig, rng: &mut SplitMix64) -> Result<GlimpseModel> {
        config.validate()?;
        let mut trunk = Vec::with_capacity(config.trunk.len());
        let mut c_in = config.image_channels;
        for (i, stage) in config.trunk.iter().enumerate() {
            trunk.push(ConvParams {
                kernel: Param::uniform(
                    format!("glimpse.trunk{i}.kernel"),
                    &[stage.out_channels, c_in, stage.kernel, stage.kernel],
                    conv_scale(c_in, stage.kernel),
                    rng,
                ),
                bias: Param::zeros(format!("glimpse.trunk{i}.bias"), &[stage.out_channels]),
            });
            c_in = stage.out_channels;
        }
        let qk = config.resolved_qk_channels()?;
        let mut branches = Vec::with_capacity(config.num_branches);
        for c in 0..config.num_branches {
            branches.push(BranchParams {
                query: Param::uniform(
                    format!("glimpse.branch{c}.query"),
                    &[qk, c_in, 1, 1],
                    conv_scale(c_in, 1),
                    rng,
                ),
                key: Param::uniform(
                    format!("glimpse.branch{c}.key"),
                    &[qk, c_in, 1, 1],
                    conv_scale(c_in, 1),
                    rng,
                ),
                value: Param::uniform(
                    format!("glimpse.branch{c}.value"),
                    &[c_in, c_in, 1, 1],
                    conv_scale(c_in, 1),
                    rng,
                ),
                gamma: Param::zeros(format!("glimpse.branch{c}.gamma"), &[1]),
                head: ConvParams {
                    kernel: Param::uniform(
                        format!("glimpse.branch{c}.head.kernel"),
                        &[
                            config.head.out_channels,
                            c_in,
                            config.head.kernel,
                            config.head.kernel,
                        ],
                        conv_scale(c_in, config.head.kernel),
                        rng,
                    ),
                    bias: Param::zeros(
                        format!("glimpse.branch{c}.head.bias"),
                        &[config.head.out_channels],
                    ),
                },
            });
        }
        Ok(GlimpseModel { config, trunk, branches })
    }

    /// Canonical parameter order; `bind` and `params_mut` must match it.
    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for stage in &self.trunk {
            out.push(&stage.kernel);
            out.push(&stage.bias);
        }
        for branch in &self.branches {
            out.push(&branch.query);
            out.push(&branch.key);
            out.push(&branch.value);
            out.push(&branch.gamma);
            out.push(&branch.head.kernel);
            out.push(&branch.head.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for stage in &mut self.trunk {
            out.push(&mut stage.kernel);
            out.push(&mut stage.bias);
        }
        for branch in &mut self.branches {
            out.push(&mut branch.query);
            out.push(&mut branch.key);
            out.push(&mut branch.value);
            out.push(&mut branch.gamma);
            out.push(&mut branch.head.kernel);
            out.push(&mut branch.head.bias);
        }
        out
    }

    pub fn bind(&self, tape: &Tape) -> Result<BoundGlimpse> {
        self.bind_with(&mut |p: &Param| p.bind(tape))
    }

    /// Like `bind`, but `next` supplies the tensor for each parameter, in
    /// `params()` order. Lets callers substitute probe tensors or constants.
    pub fn bind_with(
        &self,
        next: &mut dyn FnMut(&Param) -> Result<Tensor>,
    ) -> Result<BoundGlimpse> {
        let mut trunk = Vec::with_capacity(self.trunk.len());
        for stage in &self.trunk {
            trunk.push(BoundConv { kernel: next(&stage.kernel)?, bias: next(&stage.bias)? });
        }
        let mut branches = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            branches.push(BoundBranch {
                query: next(&branch.query)?,
                key: next(&branch.key)?,
                value: next(&branch.value)?,
                gamma: next(&branch.gamma)?,
                head: BoundConv {
                    kernel: next(&branch.head.kernel)?,
                    bias: next(&branch.head.bias)?,
                },
            });
        }
        Ok(BoundGlimpse { config: self.config.clone(), trunk, branches })
    }
}

#[derive(Debug, Clone)]
pub struct BoundConv {
    pub kernel: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct BoundBranch {
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
    pub gamma: Tensor,
    pub head: BoundConv,
}

/// Model parameters bound as leaves on one tape; reused across every frame of
/// a video so gradients accumulate over frames.
#[derive(Debug, Clone)]
pub struct BoundGlimpse {
    pub config: GlimpseConfig,
    pub trunk: Vec<BoundConv>,
    pub branches: Vec<BoundBranch>,
}

/// Row-stochastic position-to-position attention: row = output position,
/// column = source position.
#[derive(Debug, Clone)]
pub struct AttentionMap {
    pub theta: Tensor,
}

impl AttentionMap {
    pub fn validate(&self) -> Result<()> {
        let shape = self.theta.shape();
        if self.theta.rank() != 2 || shape[0] != shape[1] {
            return Err(Error::Contract(format!(
                "attention map must be square, got shape {shape:?}"
            )));
        }
        let l = shape[0];
        let data = self.theta.data();
        for (i, row) in data.chunks(l).enumerate() {
            if row.iter().any(|&v| v < 0.0) {
                return Err(Error::Contract(format!(
                    "attention row {i} has a negative entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Contract(format!(
                    "attention row {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// Switches for the reduced variants exercised by the ablation grid and by
/// equivalence tests. Both default to the full model.
#[derive(Debug, Clone, Copy)]
pub struct GlimpseSwitches {
    /// When false, every frame is routed to branch 0.
    pub use_branches: bool,
    /// When false, the self-attention block is skipped entirely.
    pub use_self_attention: bool,
}

impl Default for GlimpseSwitches {
    fn default() -> Self {
        GlimpseSwitches { use_branches: true, use_self_attention: true }
    }
}

/// Everything produced for one frame.
#[derive(Debug, Clone)]
pub struct FrameGlimpse {
    /// Pooled feature vector of width D.
    pub features: Tensor,
    pub attention: Option<AttentionMap>,
    /// Branch-head input, kept for saliency maps.
    pub head_input: Tensor,
    pub branch: usize,
}

/// Self-attention over spatial positions with a learnable residual scalar:
/// out = γ·(value · θᵀ) + feat, θ row-softmaxed over source positions.
pub fn self_attention(
    tape: &Tape,
    feat: &Tensor,
    branch: &BoundBranch,
) -> Result<(Tensor, AttentionMap)> {
    if feat.rank() != 3 {
        return Err(Error::Dimension(format!(
            "self_attention: expected [C,H,W], got shape {:?}",
            feat.shape()
        )));
    }
    let (c, h, w) = (feat.shape()[0], feat.shape()[1], feat.shape()[2]);
    if c < 8 {
        return Err(Error::Config(format!(
            "self_attention: need at least 8 channels for the query/key \
             reduction, got {c}"
        )));
    }
    let l = h * w;
    let q = tape.conv2d(feat, &branch.query, 1, 0)?;
    let k = tape.conv2d(feat, &branch.key, 1, 0)?;
    let v = tape.conv2d(feat, &branch.value, 1, 0)?;
    let qk = q.shape()[0];
    let q = tape.reshape(&q, &[qk, l])?;
    let k = tape.reshape(&k, &[qk, l])?;
    let v = tape.reshape(&v, &[c, l])?;
    let logits = tape.matmul(&tape.transpose(&q)?, &k)?;
    let theta = tape.softmax(&logits, 1)?;
    let mixed = tape.matmul(&v, &tape.transpose(&theta)?)?;
    let mixed = tape.reshape(&mixed, &[c, h, w])?;
    let out = tape.add(&tape.scale_by(&branch.gamma, &mixed)?, feat)?;
    Ok((out, AttentionMap { theta }))
}

impl BoundGlimpse {
    /// Feature vector for frame `t`: shared trunk, branch routing,
    /// self-attention, branch head, global average pool.
    pub fn forward_frame(
        &self,
        tape: &Tape,
        frame: &Tensor,
        t: usize,
        switches: GlimpseSwitches,
    ) -> Result<FrameGlimpse> {
        let cfg = &self.config;
        let want = [cfg.image_channels, cfg.image_side, cfg.image_side];
        if frame.shape() != want {
            return Err(Error::Dimension(format!(
                "frame shape {:?} does not match configured {want:?}",
                frame.shape()
            )));
        }
        let branch_idx = if switches.use_branches {
            assign_branch(t, cfg.frames_per_video, cfg.num_branches)?
        } else {
            0
        };
        let mut x = frame.clone();
        for (stage, spec) in self.trunk.iter().zip(&cfg.trunk) {
            x = tape.conv2d(&x, &stage.kernel, spec.stride, spec.padding)?;
            x = tape.bias_channels(&x, &stage.bias)?;
            x = tape.relu(&x)?;
        }
        let branch = &self.branches[branch_idx];
        let (head_input, attention) = if switches.use_self_attention {
            let (a, map) = self_attention(tape, &x, branch)?;
            (a, Some(map))
        } else {
            (x, None)
        };
        let mut y = tape.conv2d(&head_input, &branch.head.kernel, cfg.head.stride, cfg.head.padding)?;
        y = tape.bias_channels(&y, &branch.head.bias)?;
        y = tape.relu(&y)?;
        let features = tape.reduce(Reduction::GlobalAvgPool2d, &y, None)?;
        Ok(FrameGlimpse { features, attention, head_input, branch: branch_idx })
    }
}
