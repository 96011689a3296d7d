//! Synthetic occluded clips with exact ground truth.
//!
//! Each clip shows a textured disk ("face") that is mirror-symmetric about
//! a vertical axis, drifting sinusoidally over a background that varies
//! only by row, so every truth frame is exactly symmetric about the face
//! axis. An occluder (axis-aligned rectangle or ellipse) sits on one side
//! of the axis with a per-frame pixel coverage taken from a schedule.
//!
//! The face axis `a` is an integer column boundary: column `x` mirrors to
//! `2a - 1 - x`.

use std::f64::consts::PI;

use crate::dataio::video::VideoSequence;
use crate::error::{bail, Result};
use crate::numerics::{Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OccluderKind {
    /// Bounding-box style masks.
    Rect,
    /// Irregular (elliptical) blobs.
    Ellipse,
    /// Pick one of the above per clip.
    Mixed,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CoverageSchedule {
    /// Each frame is clean with probability `clean_prob`, otherwise covered
    /// by a fraction drawn uniformly from `[min, max]`.
    Random { clean_prob: f64, min: f64, max: f64 },
    /// Explicit per-frame coverage fractions.
    Fixed(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Frame side.
    pub p: usize,
    /// Frames per clip.
    pub frames: usize,
    pub channels: usize,
    pub occluder: OccluderKind,
    pub coverage: CoverageSchedule,
    /// Coverage below which a frame counts as unobstructed.
    pub clean_threshold: f64,
    pub fps: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            p: 32,
            frames: 8,
            channels: 3,
            occluder: OccluderKind::Mixed,
            coverage: CoverageSchedule::Random { clean_prob: 0.25, min: 0.06, max: 0.3 },
            clean_threshold: 0.01,
            fps: 20.0,
            seed: 0,
        }
    }
}

/// Largest coverage the generator accepts; keeps at least a quarter of each
/// frame visible for axis estimation.
pub const MAX_COVERAGE: f64 = 0.6;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p < 16 || !self.p.is_multiple_of(4) {
            bail!(Config, "frame side {} must be a multiple of 4 and at least 16", self.p);
        }
        if self.frames == 0 {
            bail!(Config, "clip needs at least one frame");
        }
        if self.channels != 1 && self.channels != 3 {
            bail!(Config, "channels must be 1 or 3");
        }
        match &self.coverage {
            CoverageSchedule::Random { clean_prob, min, max } => {
                if !(0.0..=1.0).contains(clean_prob) || !(0.0 < *min && min <= max && *max <= MAX_COVERAGE) {
                    bail!(Config, "random coverage schedule out of range");
                }
                if *min < self.clean_threshold {
                    bail!(Config, "occluded frames would count as unobstructed (min {min} < threshold)");
                }
            }
            CoverageSchedule::Fixed(c) => {
                if c.len() != self.frames {
                    bail!(Config, "coverage schedule has {} entries for {} frames", c.len(), self.frames);
                }
                if c.iter().any(|&v| !(0.0..=MAX_COVERAGE).contains(&v)) {
                    bail!(Config, "coverage values must lie in [0, {MAX_COVERAGE}]");
                }
                if !c.iter().any(|&v| v < self.clean_threshold) {
                    bail!(Config, "coverage schedule has no unobstructed frame");
                }
            }
        }
        Ok(())
    }
}

struct Scene {
    face: [f64; 3],
    eye: [f64; 3],
    bg_top: [f64; 3],
    bg_bottom: [f64; 3],
    occ_color: [f64; 3],
    radius: f64,
    stripe: f64,
    drift_x: f64,
    drift_y: f64,
    phase: f64,
    occ_left: bool,
    occ_phase: f64,
    aspect: f64,
    kind: OccluderKind,
}

fn color(rng: &mut Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.uniform_in(lo, hi), rng.uniform_in(lo, hi), rng.uniform_in(lo, hi)]
}

/// Generate one clip. Deterministic in `cfg` (including its seed).
pub fn generate_clip(cfg: &SynthConfig) -> Result<VideoSequence> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let p = cfg.p as f64;
    let kind = match cfg.occluder {
        OccluderKind::Mixed if rng.uniform() < 0.5 => OccluderKind::Rect,
        OccluderKind::Mixed => OccluderKind::Ellipse,
        k => k,
    };
    let scene = Scene {
        face: color(&mut rng, 0.5, 0.9),
        eye: color(&mut rng, 0.05, 0.3),
        bg_top: color(&mut rng, 0.05, 0.45),
        bg_bottom: color(&mut rng, 0.05, 0.45),
        occ_color: color(&mut rng, 0.3, 1.0),
        radius: p * rng.uniform_in(0.25, 0.31),
        stripe: rng.uniform_in(3.0, 6.0),
        drift_x: p * 3.0 / 32.0,
        drift_y: p * 2.0 / 32.0,
        phase: rng.uniform_in(0.0, 2.0 * PI),
        occ_left: rng.uniform() < 0.5,
        occ_phase: rng.uniform_in(0.0, 2.0 * PI),
        aspect: rng.uniform_in(0.8, 1.6),
        kind,
    };
    let coverage = match &cfg.coverage {
        CoverageSchedule::Fixed(c) => c.clone(),
        CoverageSchedule::Random { clean_prob, min, max } => {
            let mut c: Vec<f64> = (0..cfg.frames)
                .map(|_| if rng.uniform() < *clean_prob { 0.0 } else { rng.uniform_in(*min, *max) })
                .collect();
            if !c.iter().any(|&v| v < cfg.clean_threshold) {
                let t = rng.below(cfg.frames);
                c[t] = 0.0;
            }
            c
        }
    };

    let mut frames = Vec::with_capacity(cfg.frames);
    let mut masks = Vec::with_capacity(cfg.frames);
    let mut truths = Vec::with_capacity(cfg.frames);
    for (t, &cov) in coverage.iter().enumerate() {
        let w = 2.0 * PI * t as f64 / cfg.frames.max(2) as f64;
        let axis = face_axis(cfg.p, (p / 2.0 + scene.drift_x * (w + scene.phase).sin()).round() as usize);
        let cy = p / 2.0 + scene.drift_y * (w + 0.7 * scene.phase).cos();
        let truth = render_truth(cfg, &scene, axis, cy);
        let mask = occluder_mask(cfg, &scene, axis, cy, cov, w)?;
        let mut frame = truth.clone();
        let hw = cfg.p * cfg.p;
        for i in 0..hw {
            if mask.data()[i] == 1.0 {
                let x = (i % cfg.p) as f64 / p;
                for c in 0..cfg.channels {
                    let v = scene.occ_color[c % 3] * (0.85 + 0.15 * x);
                    frame.data_mut()[c * hw + i] = v as f32;
                }
            }
        }
        frames.push(frame);
        masks.push(mask);
        truths.push(truth);
    }
    VideoSequence::new(frames, masks, Some(truths), cfg.fps)
}

fn face_axis(p: usize, a: usize) -> usize {
    a.clamp(p / 4 + 2, 3 * p / 4 - 2)
}

fn render_truth(cfg: &SynthConfig, s: &Scene, axis: usize, cy: f64) -> Tensor<f32> {
    let p = cfg.p;
    let a = axis as f64;
    let r = s.radius;
    let mut img = Tensor::zeros(&[cfg.channels, p, p]);
    for y in 0..p {
        let fy = y as f64 + 0.5;
        let tv = y as f64 / (p - 1) as f64;
        for x in 0..p {
            // Mirror-invariant coordinate.
            let dx = (x as f64 + 0.5 - a).abs();
            let dy = fy - cy;
            let dist = (dx * dx + dy * dy).sqrt();
            let alpha = (r - dist + 0.5).clamp(0.0, 1.0);
            let eye = ((dx - 0.4 * r).powi(2) + (dy + 0.3 * r).powi(2)).sqrt() < 0.17 * r;
            let mouth = dx < 0.4 * r && (dy - 0.45 * r).abs() < 0.08 * r + 0.5;
            let shade = 1.0 - 0.25 * (dist / r).min(1.0).powi(2);
            let stripes = 0.06 * (2.0 * PI * dy / s.stripe).cos();
            for c in 0..cfg.channels {
                let bg = s.bg_top[c] * (1.0 - tv) + s.bg_bottom[c] * tv;
                let mut face = s.face[c] * shade + stripes;
                if eye || mouth {
                    face = s.eye[c];
                }
                let v = alpha * face + (1.0 - alpha) * bg;
                img.set(&[c, y, x], v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    img
}

fn occluder_mask(cfg: &SynthConfig, s: &Scene, axis: usize, cy: f64, cov: f64, w: f64) -> Result<Tensor<f32>> {
    let p = cfg.p;
    let mut mask = Tensor::zeros(&[1, p, p]);
    if cov <= 0.0 {
        return Ok(mask);
    }
    let target = (cov * (p * p) as f64).round().max(1.0) as usize;
    let offset = 1.0 + (w + s.occ_phase).sin();
    match s.kind {
        OccluderKind::Rect | OccluderKind::Mixed => {
            let h = (0.75 * p as f64).round() as usize;
            let wd = ((target as f64 / h as f64).round() as usize).clamp(1, p);
            let x0 = if s.occ_left {
                axis as f64 - wd as f64 - offset
            } else {
                axis as f64 + offset
            };
            let x0 = (x0.round().max(0.0) as usize).min(p - wd);
            let y_span = (p - h) as f64;
            let y0 = ((0.5 + 0.5 * (w + s.occ_phase).cos()) * y_span).round() as usize;
            for y in y0..y0 + h {
                for x in x0..x0 + wd {
                    mask.set(&[0, y, x], 1.0);
                }
            }
        }
        OccluderKind::Ellipse => {
            let draw = |scale: f64, mask: &mut Tensor<f32>| -> usize {
                let (rx, ry) = (scale, scale * s.aspect);
                let cx = if s.occ_left { axis as f64 - 0.8 * rx - offset } else { axis as f64 + 0.8 * rx + offset };
                let mut n = 0;
                for y in 0..p {
                    for x in 0..p {
                        let u = (x as f64 + 0.5 - cx) / rx;
                        let v = (y as f64 + 0.5 - cy) / ry;
                        let inside = u * u + v * v <= 1.0;
                        mask.set(&[0, y, x], if inside { 1.0 } else { 0.0 });
                        n += inside as usize;
                    }
                }
                n
            };
            // Bisect the ellipse scale to the pixel count closest to target.
            let (mut lo, mut hi) = (0.25, 2.0 * p as f64);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if draw(mid, &mut mask) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let n_lo = draw(lo, &mut mask);
            let n_hi = draw(hi, &mut mask);
            let best = if target.abs_diff(n_lo) < target.abs_diff(n_hi) { lo } else { hi };
            let n = draw(best, &mut mask);
            if n.abs_diff(target) > p {
                bail!(Config, "cannot realise coverage {cov} with an elliptical occluder");
            }
        }
    }
    Ok(mask)
}
