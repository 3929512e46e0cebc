//! Gradient-weighted activation maps: which spatial positions of each
//! branch's head input pushed one class's score up.

use std::path::{Path, PathBuf};

use crate::data::{write_frame_pgm, Dataset};
use crate::error::{Error, Result};
use crate::model::CtaNet;
use crate::numerics::Tape;
use crate::training::{sample_frames, TrainConfig};

/// Per-branch saliency over the branch-head input grid, averaged over the
/// frames the branch saw and min-max normalized to [0, 1].
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    pub branch: usize,
    /// Spatial side of the head-input grid (square).
    pub side: usize,
    /// Frames averaged into the map.
    pub frames: usize,
    pub map: Vec<f64>,
}

/// ReLU(Σ_c w_c · x_c) with w_c the spatial mean of the gradient in channel
/// c. Both buffers are [channels, side, side] row-major.
pub fn activation_map(
    features: &[f64],
    grads: &[f64],
    channels: usize,
    side: usize,
) -> Result<Vec<f64>> {
    let area = side * side;
    if features.len() != channels * area || grads.len() != features.len() {
        return Err(Error::Dimension(format!(
            "activation map needs {} x {side} x {side} features and gradients, got {} and {}",
            channels,
            features.len(),
            grads.len()
        )));
    }
    let mut map = vec![0.0; area];
    for c in 0..channels {
        let plane = c * area;
        let weight = grads[plane..plane + area].iter().sum::<f64>() / area as f64;
        for (m, x) in map.iter_mut().zip(&features[plane..plane + area]) {
            *m += weight * x;
        }
    }
    for m in &mut map {
        *m = if *m > 0.0 { *m } else { 0.0 };
    }
    Ok(map)
}

/// Rescales to [0, 1] by the min-max span; a constant map becomes all zeros.
pub fn normalize_map(map: &mut [f64]) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in map.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi > lo {
        for v in map.iter_mut() {
            *v = (*v - lo) / (hi - lo);
        }
    } else {
        map.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Runs one video through the model, backpropagates the chosen class's
/// probability, and folds the per-frame activation maps into one normalized
/// map per branch that saw at least one frame.
pub fn grad_cam(
    model: &CtaNet,
    dataset: &Dataset,
    video: usize,
    class: usize,
    cfg: &TrainConfig,
) -> Result<Vec<SaliencyMap>> {
    if class >= model.sequence.config.num_classes {
        return Err(Error::Contract(format!(
            "class {class} out of range for {} classes",
            model.sequence.config.num_classes
        )));
    }
    if video >= dataset.len() {
        return Err(Error::Contract(format!(
            "video index {video} out of range for dataset of {}",
            dataset.len()
        )));
    }
    let tape = Tape::new();
    let bound = model.bind(&tape)?;
    let sample = &dataset.samples[video];
    let picks = sample_frames(sample.frames.len(), cfg.frames_per_video)?;
    let frames = picks
        .iter()
        .map(|&f| dataset.frame_tensor(&tape, video, f))
        .collect::<Result<Vec<_>>>()?;
    let out = bound.forward_video(&tape, &frames, cfg.switches)?;
    let score = tape.index(&out.probabilities, class)?;
    tape.backward(&score)?;

    let branches = model.glimpse.config.num_branches;
    let mut sums: Vec<Option<Vec<f64>>> = vec![None; branches];
    let mut counts = vec![0usize; branches];
    let mut sides = vec![0usize; branches];
    for frame in &out.frames {
        let shape = frame.head_input.shape();
        let (channels, side) = (shape[0], shape[1]);
        let map = activation_map(
            frame.head_input.data(),
            &frame.head_input.grad()?,
            channels,
            side,
        )?;
        match &mut sums[frame.branch] {
            Some(sum) => sum.iter_mut().zip(&map).for_each(|(s, m)| *s += m),
            slot => *slot = Some(map),
        }
        counts[frame.branch] += 1;
        sides[frame.branch] = side;
    }
    let mut maps = Vec::new();
    for branch in 0..branches {
        let Some(mut map) = sums[branch].take() else { continue };
        let n = counts[branch] as f64;
        map.iter_mut().for_each(|v| *v /= n);
        normalize_map(&mut map);
        maps.push(SaliencyMap { branch, side: sides[branch], frames: counts[branch], map });
    }
    Ok(maps)
}

/// Writes `{stem}_branch{b}.pgm` per map into `dir`; returns the paths.
pub fn write_saliency_pgms(
    maps: &[SaliencyMap],
    dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(maps.len());
    for m in maps {
        let path = dir.join(format!("{stem}_branch{}.pgm", m.branch));
        let pixels: Vec<f32> = m.map.iter().map(|&v| v as f32).collect();
        write_frame_pgm(&pixels, m.side, &path)?;
        paths.push(path);
    }
    Ok(paths)
}
