//! Masked frames and the two guidance images.
//!
//! Masks use `1` for occluded pixels. The masked frame keeps the visible
//! context, `(1 - m) ⊙ v`. Symmetry axes are column boundaries: with axis
//! `a`, column `x` mirrors to `2a - 1 - x`, so `a = p/2` is the centre of
//! the frame.

use crate::dataio::VideoSequence;
use crate::error::{bail, Result};
use crate::numerics::Tensor;

/// Coverage at or above which a frame is not considered unobstructed.
pub const DEFAULT_CLEAN_THRESHOLD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedFrame {
    /// Visible content, zero inside the occlusion.
    pub context: Tensor<f32>,
    pub mask: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidancePair {
    pub symmetric: Tensor<f32>,
    pub past: Tensor<f32>,
    pub past_index: Option<usize>,
    pub fallback_used: bool,
    pub axis: usize,
}

fn check_frame_mask(v: &Tensor<f32>, m: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    let s = v.shape();
    if s.len() != 3 || m.shape() != [1, s[1], s[2]] {
        bail!(Dimension, "frame {s:?} and mask {:?} do not align", m.shape());
    }
    if m.data().iter().any(|&x| x != 0.0 && x != 1.0) {
        bail!(Contract, "mask is not binary");
    }
    Ok((s[0], s[1], s[2]))
}

pub fn make_masked_frame(v: &Tensor<f32>, m: &Tensor<f32>) -> Result<MaskedFrame> {
    let (c, h, w) = check_frame_mask(v, m)?;
    let hw = h * w;
    let md = m.data();
    let context = Tensor::from_fn(&[c, h, w], |i| if md[i % hw] == 1.0 { 0.0 } else { v.data()[i] });
    Ok(MaskedFrame { context, mask: m.clone() })
}

#[inline]
fn mirror(x: usize, axis: usize, w: usize) -> Option<usize> {
    let xm = 2 * axis as isize - 1 - x as isize;
    (0..w as isize).contains(&xm).then_some(xm as usize)
}

/// Mean squared mirror error about `axis`, over pixel pairs where both
/// members are visible. `None` when no such pair exists.
pub fn mirror_error(v: &Tensor<f32>, m: &Tensor<f32>, axis: usize) -> Option<f64> {
    let s = v.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let md = m.data();
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            let Some(xm) = mirror(x, axis, w) else { continue };
            if xm <= x || md[y * w + x] != 0.0 || md[y * w + xm] != 0.0 {
                continue;
            }
            for ch in 0..c {
                let d = (v.at(&[ch, y, x]) - v.at(&[ch, y, xm])) as f64;
                total += d * d;
            }
            count += c;
        }
    }
    (count > 0).then(|| total / count as f64)
}

/// Column in `[p/4, 3p/4]` minimising the visible mirror error; ties go
/// to the column nearest `p/2` (then the lower one).
pub fn estimate_symmetry_axis(v: &Tensor<f32>, m: &Tensor<f32>) -> Result<usize> {
    let (_, _, w) = check_frame_mask(v, m)?;
    let visible = m.data().iter().filter(|&&x| x == 0.0).count();
    if visible * 4 < m.len() {
        bail!(Guidance, "only {visible} of {} pixels visible; need at least 25%", m.len());
    }
    let centre = w / 2;
    let mut best: Option<(f64, usize)> = None;
    for a in w / 4..=3 * w / 4 {
        let Some(err) = mirror_error(v, m, a) else { continue };
        let better = match best {
            None => true,
            Some((e, b)) => err < e || (err == e && a.abs_diff(centre) < b.abs_diff(centre)),
        };
        if better {
            best = Some((err, a));
        }
    }
    match best {
        Some((_, a)) => Ok(a),
        None => bail!(Guidance, "no visible mirror pairs for any candidate axis"),
    }
}

/// Fill each occluded pixel from its visible mirror partner about `axis`;
/// pixels without one become 0. Visible pixels are copied.
pub fn make_symmetric_guide(v: &Tensor<f32>, m: &Tensor<f32>, axis: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = check_frame_mask(v, m)?;
    if axis == 0 || axis >= w {
        bail!(Contract, "axis {axis} outside frame of width {w}");
    }
    let md = m.data();
    let mut out = v.clone();
    for y in 0..h {
        for x in 0..w {
            if md[y * w + x] == 0.0 {
                continue;
            }
            let src = mirror(x, axis, w).filter(|&xm| md[y * w + xm] == 0.0);
            for ch in 0..c {
                let val = src.map_or(0.0, |xm| v.at(&[ch, y, xm]));
                out.set(&[ch, y, x], val);
            }
        }
    }
    Ok(out)
}

/// Most recent index `t̄ < t` whose coverage is below `threshold`.
pub fn find_past_in_coverages(coverages: &[f64], t: usize, threshold: f64) -> Option<usize> {
    (0..t.min(coverages.len())).rev().find(|&i| coverages[i] < threshold)
}

/// Returns the past unobstructed frame index (0-based) and whether the
/// search fell back because none exists.
pub fn find_past_unobstructed(v: &VideoSequence, t: usize, threshold: f64) -> (Option<usize>, bool) {
    let idx = find_past_in_coverages(&v.coverages(), t, threshold);
    (idx, idx.is_none())
}

/// Symmetric and past guides for an occluded frame `t`.
pub fn build_guidance(v: &VideoSequence, t: usize, threshold: f64) -> Result<GuidancePair> {
    if t >= v.len() {
        bail!(Contract, "frame {t} out of range for clip of {}", v.len());
    }
    if !v.is_occluded(t) {
        bail!(Contract, "frame {t} has no occlusion; guidance is only built for occluded frames");
    }
    let (frame, mask) = (v.frame(t), v.mask(t));
    let axis = estimate_symmetry_axis(frame, mask)?;
    let symmetric = make_symmetric_guide(frame, mask, axis)?;
    let (past_index, fallback_used) = find_past_unobstructed(v, t, threshold);
    let past = match past_index {
        Some(i) => v.frame(i).clone(),
        None => symmetric.clone(),
    };
    Ok(GuidancePair { symmetric, past, past_index, fallback_used, axis })
}
