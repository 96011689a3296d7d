//! Encoding clips into diffusion-ready frames and assembling clip batches.

use serde::{Deserialize, Serialize};

use super::schedule::{diffuse, NoiseSchedule};
use crate::dataio::VideoSequence;
use crate::error::{bail, Result};
use crate::models::guidance::tokens_graph;
use crate::models::{vae_moments, GuideSource, GuideVars, MaskedLatentCond, ModelConfig, ModelParams};
use crate::numerics::{avg_pool2x, Graph, Real, Tensor};
use crate::preprocess::{build_guidance, make_masked_frame};

/// Which guidance reaches the U-Net's attention layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceMode {
    /// Symmetric and past guides fused with the model's `(α₁, α₂)`.
    Dual,
    /// Symmetric guide alone.
    Sym,
    /// Past unobstructed frame alone.
    Past,
    /// The current occluded frame in both slots, `α = (½, ½)`.
    Present,
}

impl GuidanceMode {
    pub const ALL: [GuidanceMode; 4] = [Self::Dual, Self::Sym, Self::Past, Self::Present];

    pub fn name(self) -> &'static str {
        match self {
            Self::Dual => "dual",
            Self::Sym => "sym",
            Self::Past => "past",
            Self::Present => "present",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(Self::Dual),
            "sym" | "symmetric" | "single-symmetric" => Ok(Self::Sym),
            "past" | "single-past" => Ok(Self::Past),
            "present" | "single-present" => Ok(Self::Present),
            _ => bail!(Config, "unknown guidance mode {s:?} (dual|sym|past|present)"),
        }
    }

    pub fn alpha(self, params_alpha: [f64; 2]) -> [f64; 2] {
        match self {
            Self::Present => [0.5, 0.5],
            _ => params_alpha,
        }
    }
}

/// One frame, encoded once and reused across training steps.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedFrame {
    /// Scaled clean latent of the target (truth when known).
    pub y0: Tensor<f32>,
    pub cond: MaskedLatentCond,
    /// Guidance images for the two encoder slots, already resolved for the
    /// guidance mode.
    pub guide1: Tensor<f32>,
    pub guide2: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedClip {
    pub frames: Vec<PreparedFrame>,
    pub mode: GuidanceMode,
}

/// Masked-frame conditioning at latent resolution.
pub fn latent_cond(params: &ModelParams, frame: &Tensor<f32>, mask: &Tensor<f32>) -> Result<MaskedLatentCond> {
    let masked = make_masked_frame(frame, mask)?;
    let s = params.latent_scale as f32;
    let context = vae_moments(params, &masked.context)?.0.scale(s);
    let mut m = mask.clone();
    while m.shape()[1] > params.cfg.p_z() {
        m = avg_pool2x(&m)?;
    }
    Ok(MaskedLatentCond { context, mask: m })
}

/// Guidance images for slot 1 and slot 2 of frame `t`. Unoccluded frames use
/// the frame itself in both slots.
pub fn guide_images(
    v: &VideoSequence,
    t: usize,
    mode: GuidanceMode,
    clean_threshold: f64,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if !v.is_occluded(t) || mode == GuidanceMode::Present {
        return Ok((v.frame(t).clone(), v.frame(t).clone()));
    }
    let g = build_guidance(v, t, clean_threshold)?;
    Ok((g.symmetric, g.past))
}

pub fn prepare_clip(
    params: &ModelParams,
    v: &VideoSequence,
    mode: GuidanceMode,
    clean_threshold: f64,
) -> Result<PreparedClip> {
    let s = params.latent_scale as f32;
    let mut frames = Vec::with_capacity(v.len());
    for t in 0..v.len() {
        let target = v.truth().map_or(v.frame(t), |tr| &tr[t]);
        let y0 = vae_moments(params, target)?.0.scale(s);
        let cond = latent_cond(params, v.frame(t), v.mask(t))?;
        let (guide1, guide2) = guide_images(v, t, mode, clean_threshold)?;
        frames.push(PreparedFrame { y0, cond, guide1, guide2 });
    }
    Ok(PreparedClip { frames, mode })
}

/// A window of consecutive frames sharing one timestep, one `ε` per frame.
#[derive(Clone, Debug)]
pub struct ClipBatch<'a> {
    pub frames: &'a [PreparedFrame],
    pub mode: GuidanceMode,
    pub t: usize,
    pub eps: Vec<Tensor<f32>>,
}

impl ClipBatch<'_> {
    pub fn noisy_latents(&self, sched: &NoiseSchedule) -> Result<Vec<Tensor<f32>>> {
        if self.eps.len() != self.frames.len() {
            bail!(Contract, "{} noise tensors for {} frames", self.eps.len(), self.frames.len());
        }
        self.frames.iter().zip(&self.eps).map(|(f, e)| diffuse(&f.y0, self.t, e, sched)).collect()
    }
}

/// Guidance token variables for one prepared frame under `mode`.
pub(crate) fn frame_guides<T: Real>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    alpha: [f64; 2],
    f: &PreparedFrame,
    mode: GuidanceMode,
) -> Result<GuideVars> {
    let slot = |g: &mut Graph<'_, T>, img: &Tensor<f32>, src: GuideSource| {
        let x = g.input(img.cast());
        tokens_graph(g, cfg, src, x)
    };
    Ok(match mode {
        GuidanceMode::Sym => GuideVars::Single(slot(g, &f.guide1, GuideSource::Symmetric)?),
        GuidanceMode::Past => GuideVars::Single(slot(g, &f.guide2, GuideSource::Past)?),
        GuidanceMode::Dual | GuidanceMode::Present => {
            // A zero-weight source never reaches the output; skip its encoder.
            let t1 = if alpha[0] != 0.0 { Some(slot(g, &f.guide1, GuideSource::Symmetric)?) } else { None };
            let t2 = if alpha[1] != 0.0 { Some(slot(g, &f.guide2, GuideSource::Past)?) } else { None };
            match (t1, t2) {
                (Some(a), Some(b)) => GuideVars::Dual(a, b),
                // The unused slot carries weight zero and is never read.
                (Some(a), None) | (None, Some(a)) => GuideVars::Dual(a, a),
                (None, None) => bail!(Config, "fusion weights are both zero"),
            }
        }
    })
}
