//! Synthetic phase-structured video benchmark and its on-disk format.
//!
//! Every video plays approach-manipulate-withdraw over its timeline thirds:
//! a "hand" blob orbits an object patch, trending from small to large over
//! the approach, holding a middle size while manipulating, and playing the
//! approach sizes backwards during withdrawal. The patch shows the class
//! texture during the middle phase only; the outer phases stamp distractor
//! textures from the same stripe family, drawn per scene and shared across
//! classes, so the label's texture half is "the pattern on screen while the
//! blob holds its middle size" — frames from other phases actively mislead
//! a reader that cannot tell phases apart. A class is a (texture, phase
//! order) pair; the reversed class plays the same three clips
//! withdraw-first, an exact frame permutation of its forward partner
//! (before noise). Three nuisances force the order readout to be a
//! cross-frame size comparison rather than a per-frame size lookup: the
//! blob's peak brightness is scene-random, the video length (and so the
//! size met at any given sampled slot) is scene-random, and consecutive
//! sizes zigzag around the trend so the sign of a single frame-to-frame
//! change carries no phase direction.
//!
//! Generation is byte-deterministic: all randomness comes from seeded
//! substreams keyed by stable ids, and pixel placement uses only rational
//! arithmetic (no transcendentals), so the f32 output is identical across
//! platforms and execution orders.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::glimpse::assign_branch;
use crate::numerics::{Tape, Tensor};
use crate::rng::{streams, SplitMix64};

const MAGIC: &[u8; 5] = b"CTAV1";

/// Phase playback order; `Reversed` plays the phase clips back-to-front.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseOrder {
    Forward,
    Reversed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Class count; one class per (texture, order) pair, so it must be even
    /// and at least 4 to contain both a texture-only and an order-only pair.
    pub num_classes: usize,
    pub videos_per_class: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub image_side: usize,
    /// Uniform additive pixel noise in ±amplitude, applied per video.
    pub noise_amplitude: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_classes: 6,
            videos_per_class: 40,
            min_frames: 18,
            max_frames: 36,
            image_side: 64,
            noise_amplitude: 0.02,
        }
    }
}

impl SynthSpec {
    /// (texture id, phase order) for each class id.
    pub fn class_table(&self) -> Vec<(usize, PhaseOrder)> {
        (0..self.num_classes)
            .map(|c| {
                let order = if c % 2 == 0 { PhaseOrder::Forward } else { PhaseOrder::Reversed };
                (c / 2, order)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 4 || self.num_classes % 2 != 0 {
            return Err(Error::Config(format!(
                "num_classes must be an even number of at least 4 so the class \
                 table has texture-only and order-only pairs, got {}",
                self.num_classes
            )));
        }
        if self.videos_per_class == 0 {
            return Err(Error::Config("videos_per_class must be at least 1".into()));
        }
        if self.min_frames < 3 || self.min_frames > self.max_frames {
            return Err(Error::Config(format!(
                "need 3 <= min_frames <= max_frames, got [{}, {}]",
                self.min_frames, self.max_frames
            )));
        }
        if self.image_side < 32 {
            return Err(Error::Config(format!(
                "image side {} cannot fit the blob and object geometry; need \
                 at least 32",
                self.image_side
            )));
        }
        if !(0.0..=0.5).contains(&self.noise_amplitude) {
            return Err(Error::Config(format!(
                "noise amplitude must be in [0, 0.5], got {}",
                self.noise_amplitude
            )));
        }
        Ok(())
    }

    /// Smallest, held (manipulate), and largest blob radius of the ramp.
    fn blob_radii(&self) -> (f64, f64, f64) {
        let unit = self.image_side as f64 / 64.0;
        (2.0 * unit, 4.5 * unit, 7.0 * unit)
    }

    /// Zigzag amplitude added to every odd step of the ramp.
    fn blob_zigzag(&self) -> f64 {
        2.0 * self.image_side as f64 / 64.0
    }

    /// Orbit diameter parameter; waypoints stay at least `patch_side/2 +
    /// max blob radius` from the object so the blob never covers the patch.
    fn orbit_span(&self) -> f64 {
        self.image_side as f64 * 26.0 / 64.0
    }

    fn patch_side(&self) -> usize {
        self.image_side * 12 / 64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub label: usize,
    /// One row per frame, each `channels * side * side` f32 pixels in [0, 1].
    pub frames: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub image_side: usize,
    pub image_channels: usize,
    pub num_classes: usize,
    pub samples: Vec<VideoSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// One frame as a gradient-free `[C, S, S]` tensor.
    pub fn frame_tensor(&self, tape: &Tape, video: usize, frame: usize) -> Result<Tensor> {
        let sample = self.samples.get(video).ok_or_else(|| {
            Error::Contract(format!("video {video} out of range for {}", self.len()))
        })?;
        let data = sample.frames.get(frame).ok_or_else(|| {
            Error::Contract(format!(
                "frame {frame} out of range for video {video} with {} frames",
                sample.frames.len()
            ))
        })?;
        tape.constant(
            data.iter().map(|&v| v as f64).collect(),
            &[self.image_channels, self.image_side, self.image_side],
        )
    }
}

/// Per-video scene drawn from the geometry stream. The stream is keyed by
/// the within-class video index alone, so the k-th video of every class
/// shares one scene — length, object position, and the two distractor
/// textures — and classes differ only in the middle-phase pattern and in
/// which order the phase clips play.
struct Scene {
    length: usize,
    object: (i64, i64),
    /// Texture ids stamped during the approach and withdraw phases.
    distractors: [usize; 2],
    /// Peak blob value; scene-random so absolute blob size cannot be read
    /// off a single frame's mass without first calibrating the scene.
    brightness: f64,
}

fn draw_scene(spec: &SynthSpec, rng: &mut SplitMix64) -> Scene {
    let side = spec.image_side as i64;
    let length = rng.range_inclusive(spec.min_frames as u64, spec.max_frames as u64) as usize;
    let jitter = side / 32;
    let jx = rng.range_inclusive(0, 2 * jitter as u64) as i64 - jitter;
    let jy = rng.range_inclusive(0, 2 * jitter as u64) as i64 - jitter;
    let textures = (spec.num_classes / 2) as u64;
    let distractors = [
        rng.next_below(textures) as usize,
        rng.next_below(textures) as usize,
    ];
    let brightness = (7 + rng.next_below(4)) as f64 / 10.0;
    Scene {
        length,
        object: (side / 2 + jx, side / 2 + jy),
        distractors,
        brightness,
    }
}

/// Orbit waypoints around the object, on a fixed integer star scaled by the
/// span parameter; no trigonometry so the math is exact.
const ORBIT: [(f64, f64); 8] = [
    (2.0, 0.0),
    (1.0, 1.0),
    (0.0, 2.0),
    (-1.0, 1.0),
    (-2.0, 0.0),
    (-1.0, -1.0),
    (0.0, -2.0),
    (1.0, -1.0),
];

fn orbit_pos(object: (i64, i64), step: usize, span: f64) -> (f64, f64) {
    let (dx, dy) = ORBIT[step % ORBIT.len()];
    (object.0 as f64 + dx * span / 2.0, object.1 as f64 + dy * span / 2.0)
}

/// Stamps `max(current, value)` of a linear tent blob of the given Chebyshev
/// radius and peak value centered at `(cx, cy)`.
fn stamp_blob(pixels: &mut [f64], side: usize, cx: f64, cy: f64, radius: f64, peak: f64) {
    let x0 = (cx - radius).floor().max(0.0) as usize;
    let x1 = (cx + radius).ceil().min(side as f64 - 1.0) as usize;
    let y0 = (cy - radius).floor().max(0.0) as usize;
    let y1 = (cy + radius).ceil().min(side as f64 - 1.0) as usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = (x as f64 - cx).abs().max((y as f64 - cy).abs());
            let v = peak * (1.0 - d / radius).max(0.0);
            let p = &mut pixels[y * side + x];
            if v > *p {
                *p = v;
            }
        }
    }
}

/// Stripe periods cycle through these and double on each wrap, so any id
/// count stays pairwise distinct within a family.
const PERIODS: [usize; 3] = [2, 3, 5];

/// Textures are diagonal stripes separated only by their period, so telling
/// ids apart takes frequency-selective filters, and a distractor patch is
/// indistinguishable in kind from a class patch. High contrast, integer
/// cell logic only, keeping bytes platform-independent.
fn texture_pattern(id: usize, ps: usize) -> Vec<f64> {
    let period = PERIODS[id % PERIODS.len()] << (id / PERIODS.len());
    (0..ps * ps)
        .map(|i| {
            let (row, col) = (i / ps, i % ps);
            if ((row + col) / period) % 2 == 0 {
                0.95
            } else {
                0.3
            }
        })
        .collect()
}

fn stamp_patch(pixels: &mut [f64], side: usize, object: (i64, i64), pattern: &[f64], ps: usize) {
    let x0 = object.0 - ps as i64 / 2;
    let y0 = object.1 - ps as i64 / 2;
    for py in 0..ps {
        for px in 0..ps {
            let x = x0 + px as i64;
            let y = y0 + py as i64;
            if x < 0 || y < 0 || x >= side as i64 || y >= side as i64 {
                continue;
            }
            let p = &mut pixels[y as usize * side + x as usize];
            let v = pattern[py * ps + px];
            if v > *p {
                *p = v;
            }
        }
    }
}

/// Canonical approach-manipulate-withdraw frames, pre-noise, in f64. The
/// orbit restarts identically in every phase (the step counts from the
/// phase clip's own start and the waypoint table is fixed, not
/// scene-random, so the blob's path is the same in every video), and the
/// thirds differ only in the stamped pattern and in the blob-radius ramp:
/// trending small-to-large over the approach, held mid-size while
/// manipulating, and replayed backwards over the withdrawal. Odd steps jump
/// by the zigzag amplitude, so consecutive sizes alternate around the trend
/// and a single frame-to-frame difference has no informative sign.
/// Rational arithmetic keeps frames platform-exact.
fn render_canonical(
    spec: &SynthSpec,
    scene: &Scene,
    phase_patterns: &[&[f64]; 3],
) -> Vec<Vec<f64>> {
    let side = spec.image_side;
    let (r_lo, r_mid, r_hi) = spec.blob_radii();
    let r_zig = spec.blob_zigzag();
    let span = spec.orbit_span();
    let ps = spec.patch_side();
    let length = scene.length;
    let phase_of: Vec<usize> =
        (0..length).map(|i| assign_branch(i, length, 3).unwrap()).collect();
    let phase_start = |p: usize| phase_of.iter().position(|&q| q == p).unwrap();
    let phase_len = |p: usize| phase_of.iter().filter(|&&q| q == p).count();
    let ramp = |phase: usize, j: usize| {
        let len = phase_len(phase);
        let rise = |j: usize| {
            let frac = if len > 1 { j as f64 / (len - 1) as f64 } else { 0.0 };
            let zig = if j % 2 == 1 { r_zig } else { 0.0 };
            r_lo + (r_hi - r_zig - r_lo) * frac + zig
        };
        match phase {
            0 => rise(j),
            1 => r_mid,
            _ => rise(len - 1 - j),
        }
    };

    (0..length)
        .map(|i| {
            let phase = phase_of[i];
            let j = i - phase_start(phase);
            let mut pixels = vec![0.0f64; side * side];
            stamp_patch(&mut pixels, side, scene.object, phase_patterns[phase], ps);
            let (cx, cy) = orbit_pos(scene.object, j, span);
            stamp_blob(&mut pixels, side, cx, cy, ramp(phase, j), scene.brightness);
            pixels
        })
        .collect()
}

/// Reorders canonical frames into the class's phase script. Reversal swaps
/// whole phase clips (withdraw first), keeping each clip's internal order,
/// so the frame multiset is exactly preserved.
fn apply_order(frames: Vec<Vec<f64>>, order: PhaseOrder) -> Vec<Vec<f64>> {
    match order {
        PhaseOrder::Forward => frames,
        PhaseOrder::Reversed => {
            let length = frames.len();
            let phase_of: Vec<usize> =
                (0..length).map(|i| assign_branch(i, length, 3).unwrap()).collect();
            let mut out = Vec::with_capacity(length);
            for phase in [2, 1, 0] {
                for (i, frame) in frames.iter().enumerate() {
                    if phase_of[i] == phase {
                        out.push(frame.clone());
                    }
                }
            }
            out
        }
    }
}

/// Generates the full benchmark for `(spec, seed)`. Byte-deterministic: the
/// same inputs always produce the same f32 pixels.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let table = spec.class_table();
    let num_textures = spec.num_classes / 2;
    let ps = spec.patch_side();
    let patterns: Vec<Vec<f64>> =
        (0..num_textures).map(|t| texture_pattern(t, ps)).collect();

    let mut samples = Vec::with_capacity(spec.num_classes * spec.videos_per_class);
    for (class, &(texture, order)) in table.iter().enumerate() {
        for k in 0..spec.videos_per_class {
            let mut geom = SplitMix64::substreams(seed, &[streams::GEOMETRY, k as u64]);
            let scene = draw_scene(spec, &mut geom);
            // The class texture shows only during the middle phase; the
            // outer phases stamp the scene's distractors, so a reader that
            // cannot tell phases apart sees up to three candidate textures.
            let phase_patterns: [&[f64]; 3] = [
                &patterns[scene.distractors[0]],
                &patterns[texture],
                &patterns[scene.distractors[1]],
            ];
            let canonical = render_canonical(spec, &scene, &phase_patterns);
            let ordered = apply_order(canonical, order);
            let video_id = (class * spec.videos_per_class + k) as u64;
            let frames = ordered
                .into_iter()
                .enumerate()
                .map(|(t, mut pixels)| {
                    let mut noise =
                        SplitMix64::substreams(seed, &[streams::NOISE, video_id, t as u64]);
                    for v in &mut pixels {
                        *v = (*v + noise.uniform(-spec.noise_amplitude, spec.noise_amplitude))
                            .clamp(0.0, 1.0);
                    }
                    pixels.into_iter().map(|v| v as f32).collect()
                })
                .collect();
            samples.push(VideoSample { label: class, frames });
        }
    }
    Ok(Dataset {
        image_side: spec.image_side,
        image_channels: 1,
        num_classes: spec.num_classes,
        samples,
    })
}

fn blob_name(video_id: usize) -> String {
    format!("video_{video_id:05}.bin")
}

/// Writes `index.csv` plus one binary blob per video into `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = String::from("video_id,label,num_frames,file\n");
    for (id, sample) in dataset.samples.iter().enumerate() {
        let name = blob_name(id);
        let per_frame = dataset.image_channels * dataset.image_side * dataset.image_side;
        let mut bytes = Vec::with_capacity(MAGIC.len() + 12 + sample.frames.len() * per_frame * 4);
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(sample.frames.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&(dataset.image_channels as u32).to_le_bytes());
        bytes.extend_from_slice(&(dataset.image_side as u32).to_le_bytes());
        for frame in &sample.frames {
            for &v in frame {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let path = dir.join(&name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        index.push_str(&format!("{id},{},{},{name}\n", sample.label, sample.frames.len()));
    }
    let index_path = dir.join("index.csv");
    fs::write(&index_path, index).map_err(|e| Error::io(&index_path, e))?;
    Ok(())
}

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    let end = at + 4;
    if end > bytes.len() {
        return Err(Error::Format(format!("{}: truncated header", path.display())));
    }
    Ok(u32::from_le_bytes(bytes[at..end].try_into().unwrap()))
}

fn read_blob(path: &Path, expect_frames: usize) -> Result<(usize, usize, Vec<Vec<f32>>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic, not a video blob",
            path.display()
        )));
    }
    let l = read_u32(&bytes, 5, path)? as usize;
    let c = read_u32(&bytes, 9, path)? as usize;
    let s = read_u32(&bytes, 13, path)? as usize;
    if l != expect_frames {
        return Err(Error::Format(format!(
            "{}: manifest says {expect_frames} frames, blob header says {l}",
            path.display()
        )));
    }
    let per_frame = c * s * s;
    let want = 17 + l * per_frame * 4;
    if bytes.len() != want {
        return Err(Error::Format(format!(
            "{}: expected {want} bytes for {l} frames, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let mut frames = Vec::with_capacity(l);
    let mut at = 17;
    for _ in 0..l {
        let mut frame = Vec::with_capacity(per_frame);
        for _ in 0..per_frame {
            frame.push(f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()));
            at += 4;
        }
        frames.push(frame);
    }
    Ok((c, s, frames))
}

/// Reads a dataset directory written by `write_dataset`.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let index_path = dir.join("index.csv");
    let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != "video_id,label,num_frames,file" {
        return Err(Error::Format(format!(
            "{}: unexpected header `{header}`",
            index_path.display()
        )));
    }
    let mut samples = Vec::new();
    let mut shape: Option<(usize, usize)> = None;
    let mut max_label = 0usize;
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!(
                "{}: line {} has {} fields, expected 4",
                index_path.display(),
                lineno + 2,
                fields.len()
            )));
        }
        let parse = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| {
                Error::Format(format!(
                    "{}: line {}: bad {what} `{s}`",
                    index_path.display(),
                    lineno + 2
                ))
            })
        };
        let id = parse(fields[0], "video_id")?;
        if id != samples.len() {
            return Err(Error::Format(format!(
                "{}: video ids must be dense and ordered; expected {}, got {id}",
                index_path.display(),
                samples.len()
            )));
        }
        let label = parse(fields[1], "label")?;
        let num_frames = parse(fields[2], "num_frames")?;
        let blob_path = dir.join(fields[3]);
        let (c, s, frames) = read_blob(&blob_path, num_frames)?;
        match shape {
            None => shape = Some((c, s)),
            Some(prev) if prev != (c, s) => {
                return Err(Error::Format(format!(
                    "{}: shape {:?} differs from earlier videos {:?}",
                    blob_path.display(),
                    (c, s),
                    prev
                )));
            }
            _ => {}
        }
        max_label = max_label.max(label);
        samples.push(VideoSample { label, frames });
    }
    if samples.is_empty() {
        return Err(Error::Format(format!(
            "{}: dataset lists no videos",
            index_path.display()
        )));
    }
    let (c, s) = shape.unwrap();
    Ok(Dataset {
        image_side: s,
        image_channels: c,
        num_classes: max_label + 1,
        samples,
    })
}

/// Writes one frame as a binary 8-bit PGM image for quick inspection.
pub fn write_frame_pgm(frame: &[f32], side: usize, path: &Path) -> Result<()> {
    if frame.len() != side * side {
        return Err(Error::Dimension(format!(
            "frame has {} pixels, expected {}",
            frame.len(),
            side * side
        )));
    }
    let mut bytes = format!("P5\n{side} {side}\n255\n").into_bytes();
    bytes.extend(frame.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}
