//! Reverse-diffusion inpainting of whole clips.

use super::batch::{guide_images, latent_cond, GuidanceMode};
use super::schedule::{reverse_step, NoiseSchedule};
use crate::dataio::VideoSequence;
use crate::error::{bail, Result};
use crate::models::guidance::tokens_graph;
use crate::models::{unet_predict_noise, vae_decode, GuidanceTokens, GuideSource, Guides, LatentMap, ModelParams};
use crate::numerics::{Graph, Rng, Tensor};
use crate::preprocess::DEFAULT_CLEAN_THRESHOLD;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InpaintConfig {
    pub mode: GuidanceMode,
    /// Start every occluded frame of a clip from the same initial noise.
    pub shared_noise: bool,
    pub seed: u64,
    pub clean_threshold: f64,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        Self { mode: GuidanceMode::Dual, shared_noise: true, seed: 0, clean_threshold: DEFAULT_CLEAN_THRESHOLD }
    }
}

#[derive(Clone, Debug)]
pub struct Inpainted {
    pub video: VideoSequence,
    /// Guidance images per frame (`None` for pass-through frames).
    pub guides: Vec<Option<(Tensor<f32>, Tensor<f32>)>>,
}

fn tokens(params: &ModelParams, img: &Tensor<f32>, src: GuideSource) -> Result<GuidanceTokens> {
    let mut g = Graph::inference(&params.store);
    let x = g.input(img.clone());
    let t = tokens_graph(&mut g, &params.cfg, src, x)?;
    g.check_finite()?;
    Ok(GuidanceTokens { keys: g.value(t.keys).clone(), values: g.value(t.values).clone(), source: src })
}

/// `(1 − m)⊙v + m⊙x`, taking `v` verbatim wherever `m = 0`.
pub fn composite(v: &Tensor<f32>, m: &Tensor<f32>, x: &Tensor<f32>) -> Result<Tensor<f32>> {
    v.expect_same_shape(x)?;
    let s = v.shape();
    let hw = s[1] * s[2];
    if m.len() != hw {
        bail!(Dimension, "mask {:?} does not cover frame {s:?}", m.shape());
    }
    let md = m.data();
    Ok(Tensor::from_fn(s, |i| {
        let mv = md[i % hw];
        if mv == 0.0 {
            v.data()[i]
        } else {
            (1.0 - mv) * v.data()[i] + mv * x.data()[i]
        }
    }))
}

/// Inpaint every occluded frame of `v`; unoccluded frames pass through.
pub fn inpaint_clip(v: &VideoSequence, params: &ModelParams, sched: &NoiseSchedule, cfg: &InpaintConfig) -> Result<Inpainted> {
    let latent = params.cfg.latent_shape();
    if v.channels() != params.cfg.channels || v.side() != params.cfg.p {
        bail!(Dimension, "clip frames [{}, {}, {}] do not match the model", v.channels(), v.side(), v.side());
    }
    let mut rng = Rng::new(cfg.seed);
    let shared = Tensor::<f32>::randn(&latent, &mut rng);
    let scale = params.latent_scale as f32;
    let alpha = cfg.mode.alpha(params.alpha());
    let reweighted;
    let params = if alpha != params.alpha() {
        let mut p = params.clone();
        p.set_alpha(alpha[0], alpha[1])?;
        reweighted = p;
        &reweighted
    } else {
        params
    };
    let mut frames = Vec::with_capacity(v.len());
    let mut guides = Vec::with_capacity(v.len());
    for t in 0..v.len() {
        let mut frame_rng = rng.fork(t as u64);
        if !v.is_occluded(t) {
            frames.push(v.frame(t).clone());
            guides.push(None);
            continue;
        }
        let (g1, g2) = guide_images(v, t, cfg.mode, cfg.clean_threshold)?;
        let cond = latent_cond(params, v.frame(t), v.mask(t))?;
        let fused = matches!(cfg.mode, GuidanceMode::Dual | GuidanceMode::Present);
        let tok1 = if cfg.mode == GuidanceMode::Sym || (fused && alpha[0] != 0.0) {
            Some(tokens(params, &g1, GuideSource::Symmetric)?)
        } else {
            None
        };
        let tok2 = if cfg.mode == GuidanceMode::Past || (fused && alpha[1] != 0.0) {
            Some(tokens(params, &g2, GuideSource::Past)?)
        } else {
            None
        };
        let init = if cfg.shared_noise { shared.clone() } else { Tensor::randn(&latent, &mut frame_rng) };
        let mut y = LatentMap::noisy(init, sched.t_max());
        while let Some(step) = y.timestep() {
            let g = match (cfg.mode, &tok1, &tok2) {
                (GuidanceMode::Sym, Some(a), _) | (GuidanceMode::Past, _, Some(a)) => Guides::Single(a),
                (_, Some(a), Some(b)) => Guides::Dual(a, b),
                (_, Some(a), None) | (_, None, Some(a)) => Guides::Dual(a, a),
                _ => bail!(Config, "no active guidance source"),
            };
            let eps_hat = unet_predict_noise(params, &y, &cond, Some(g))?;
            let z = if sched.sigma(step) > 0.0 { Tensor::randn(&latent, &mut frame_rng) } else { Tensor::zeros(&latent) };
            y = reverse_step(&y, &eps_hat, sched, &z)?;
        }
        let decoded = vae_decode(params, &LatentMap::clean(y.values.scale(1.0 / scale)))?;
        frames.push(composite(v.frame(t), v.mask(t), &decoded)?);
        guides.push(Some((g1, g2)));
    }
    let video = v.with_frames(frames)?;
    Ok(Inpainted { video, guides })
}
