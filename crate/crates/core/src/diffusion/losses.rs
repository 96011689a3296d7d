//! Denoising loss, motion-consistency loss and their weighted sum.

use super::batch::{frame_guides, ClipBatch};
use super::schedule::NoiseSchedule;
use crate::error::{bail, Result};
use crate::models::unet::{forward, UnetInputs};
use crate::models::{ModelConfig, ModelParams};
use crate::numerics::{Graph, Real, Tensor, Var};

/// Mean over frames of `‖ε − ε̂‖²`.
pub fn noise_loss(eps: &[Tensor<f32>], eps_hat: &[Tensor<f32>]) -> Result<f64> {
    if eps.is_empty() || eps.len() != eps_hat.len() {
        bail!(Contract, "{} noise tensors vs {} predictions", eps.len(), eps_hat.len());
    }
    let mut total = 0.0;
    for (e, h) in eps.iter().zip(eps_hat) {
        e.expect_same_shape(h)?;
        total += e.data().iter().zip(h.data()).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum::<f64>();
    }
    Ok(total / eps.len() as f64)
}

/// `(2/F)·Σ_{t=1}^{F−1} ‖y_t − y_{t−1}‖²` over same-step noisy latents.
pub fn motion_loss(noisy: &[Tensor<f32>]) -> Result<f64> {
    let f = noisy.len();
    if f < 2 {
        bail!(Contract, "motion loss needs at least two frames, got {f}");
    }
    let mut sum = 0.0;
    for w in noisy.windows(2) {
        w[0].expect_same_shape(&w[1])?;
        sum += w[1].data().iter().zip(w[0].data()).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum::<f64>();
    }
    Ok(2.0 / f as f64 * sum)
}

pub fn loss_motion(batch: &ClipBatch<'_>, sched: &NoiseSchedule) -> Result<f64> {
    motion_loss(&batch.noisy_latents(sched)?)
}

/// Recorded loss terms for one batch.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub diff: Var,
    /// Constant with respect to every network parameter: the noisy latents
    /// come from the frozen encoder and the sampled noise.
    pub motion: f64,
}

/// Record `L_diff + λ·L_motion` for `batch`.
pub fn loss_graph<T: Real>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    alpha: [f64; 2],
    batch: &ClipBatch<'_>,
    sched: &NoiseSchedule,
    lambda: f64,
) -> Result<LossVars> {
    if batch.t == 0 || batch.t > sched.t_max() {
        bail!(Contract, "batch timestep {} outside [1, {}]", batch.t, sched.t_max());
    }
    let noisy = batch.noisy_latents(sched)?;
    let alpha = batch.mode.alpha(alpha);
    let mut terms = Vec::with_capacity(batch.frames.len());
    for ((f, y), e) in batch.frames.iter().zip(&noisy).zip(&batch.eps) {
        let guides = frame_guides(g, cfg, alpha, f, batch.mode)?;
        let inp = UnetInputs {
            y: g.input(y.cast()),
            t: batch.t,
            context: g.input(f.cond.context.cast()),
            mask: g.input(f.cond.mask.cast()),
            guides: Some(guides),
        };
        let eps_hat = forward(g, cfg, alpha, inp)?;
        let eps = g.input(e.cast());
        let d = g.sub(eps, eps_hat)?;
        let sq = g.square(d);
        terms.push(g.sum(sq));
    }
    let stacked = g.concat0(&terms)?;
    let diff = g.mean(stacked);
    let motion = if noisy.len() >= 2 { motion_loss(&noisy)? } else { 0.0 };
    let total = if lambda != 0.0 {
        if noisy.len() < 2 {
            bail!(Contract, "motion loss needs at least two frames");
        }
        let m = g.input(Tensor::scalar(T::of(lambda * motion)));
        g.add(diff, m)?
    } else {
        diff
    };
    Ok(LossVars { total, diff, motion })
}

fn eval(params: &ModelParams, batch: &ClipBatch<'_>, sched: &NoiseSchedule, lambda: f64) -> Result<(f64, f64, f64)> {
    let mut g = Graph::inference(&params.store);
    let l = loss_graph(&mut g, &params.cfg, params.alpha(), batch, sched, lambda)?;
    g.check_finite()?;
    Ok((g.value(l.total).item()? as f64, g.value(l.diff).item()? as f64, l.motion))
}

pub fn loss_diff(batch: &ClipBatch<'_>, params: &ModelParams, sched: &NoiseSchedule) -> Result<f64> {
    Ok(eval(params, batch, sched, 0.0)?.1)
}

pub fn loss_total(batch: &ClipBatch<'_>, params: &ModelParams, sched: &NoiseSchedule, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        bail!(Config, "motion-loss weight must be non-negative, got {lambda}");
    }
    Ok(eval(params, batch, sched, lambda)?.0)
}

