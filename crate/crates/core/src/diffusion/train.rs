//! Denoiser training loop.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use serde::Serialize;

use super::batch::{ClipBatch, PreparedClip};
use super::losses::loss_graph;
use super::schedule::NoiseSchedule;
use crate::error::{bail, Error, Result};
use crate::models::{save_checkpoint, ModelParams};
use crate::numerics::{Adam, AdamConfig, Graph, Rng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Include `λ·L_motion` in the optimised loss.
    pub motion_loss: bool,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
    /// Destination for periodic checkpoints and failure dumps.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 2000, lr: 1e-3, seed: 0, motion_loss: true, checkpoint_every: 0, out_dir: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    /// 1-based.
    pub step: usize,
    pub t: usize,
    pub clip: usize,
    pub loss_total: f64,
    pub loss_diff: f64,
    pub loss_motion: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
}

impl TrainReport {
    /// `step,loss_total,loss_diff,loss_motion`, one row per step.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss_total,loss_diff,loss_motion\n");
        for r in &self.records {
            writeln!(s, "{},{},{},{}", r.step, r.loss_total, r.loss_diff, r.loss_motion).expect("string write");
        }
        s
    }

    /// Mean losses grouped by diffusion timestep:
    /// `t,count,loss_total,loss_diff,loss_motion`.
    pub fn per_timestep_csv(&self) -> String {
        let t_max = self.records.iter().map(|r| r.t).max().unwrap_or(0);
        let mut acc = vec![(0usize, 0.0, 0.0, 0.0); t_max + 1];
        for r in &self.records {
            let a = &mut acc[r.t];
            a.0 += 1;
            a.1 += r.loss_total;
            a.2 += r.loss_diff;
            a.3 += r.loss_motion;
        }
        let mut s = String::from("t,count,loss_total,loss_diff,loss_motion\n");
        for (t, (n, lt, ld, lm)) in acc.into_iter().enumerate().filter(|(_, a)| a.0 > 0) {
            let n_f = n as f64;
            writeln!(s, "{t},{n},{},{},{}", lt / n_f, ld / n_f, lm / n_f).expect("string write");
        }
        s
    }

    /// Mean `loss_total` over 1-based steps `first..=last`.
    pub fn mean_total(&self, first: usize, last: usize) -> f64 {
        let sel: Vec<f64> =
            self.records.iter().filter(|r| r.step >= first && r.step <= last).map(|r| r.loss_total).collect();
        sel.iter().sum::<f64>() / sel.len().max(1) as f64
    }
}

#[derive(Serialize)]
struct FailureDump<'a> {
    step: usize,
    t: usize,
    clip: usize,
    loss_total: f64,
    loss_diff: f64,
    loss_motion: f64,
    detail: String,
    param_norms: Vec<(&'a str, f64)>,
}

fn dump_failure(params: &ModelParams, cfg: &TrainConfig, rec: &StepRecord, detail: String) -> Error {
    let msg = format!("training diverged at step {} (t = {}, clip {}): {detail}", rec.step, rec.t, rec.clip);
    if let Some(dir) = &cfg.out_dir {
        let dump = FailureDump {
            step: rec.step,
            t: rec.t,
            clip: rec.clip,
            loss_total: rec.loss_total,
            loss_diff: rec.loss_diff,
            loss_motion: rec.loss_motion,
            detail,
            param_norms: params
                .store
                .iter()
                .map(|(_, p)| (p.name.as_str(), (p.value.sum_sq() as f64).sqrt()))
                .collect(),
        };
        // serde_json writes non-finite floats as null.
        let text = serde_json::to_string_pretty(&dump).expect("dump serializes");
        if fs::create_dir_all(dir).and_then(|_| fs::write(dir.join("nan_dump.json"), text)).is_err() {
            return Error::Numeric(format!("{msg} (failure dump could not be written)"));
        }
    }
    Error::Numeric(msg)
}

pub fn train(
    data: &[PreparedClip],
    params: &mut ModelParams,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with(data, params, sched, cfg, |_| {})
}

/// Train the guidance encoders, projectors and U-Net. Each step samples a
/// clip, one timestep for the whole clip and one `ε` per frame, then takes
/// one Adam step on the batch loss. `on_step` sees every record.
pub fn train_with(
    data: &[PreparedClip],
    params: &mut ModelParams,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainReport> {
    if data.is_empty() {
        bail!(Config, "no training clips");
    }
    if let Some((_, p)) = params.store.iter().find(|(_, p)| p.trainable && p.name.starts_with("vae.")) {
        bail!(Contract, "VAE must be pretrained and frozen before diffusion training ({} is trainable)", p.name);
    }
    if cfg.motion_loss && data.iter().any(|c| c.frames.len() < 2) {
        bail!(Contract, "motion loss needs clips of at least two frames");
    }
    params.schedule = Some(sched.spec);
    let lambda = if cfg.motion_loss { params.lambda() } else { 0.0 };
    let latent = params.cfg.latent_shape();
    let mut rng = Rng::new(cfg.seed);
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut report = TrainReport { records: Vec::with_capacity(cfg.steps) };
    for step in 1..=cfg.steps {
        let clip = rng.below(data.len());
        let t = 1 + rng.below(sched.t_max());
        let prepared = &data[clip];
        let eps: Vec<Tensor<f32>> = prepared.frames.iter().map(|_| Tensor::randn(&latent, &mut rng)).collect();
        let batch = ClipBatch { frames: &prepared.frames, mode: prepared.mode, t, eps };
        params.store.zero_grad();
        let (rec, grads) = {
            let mut g = Graph::with_params(&params.store);
            let l = loss_graph(&mut g, &params.cfg, params.alpha(), &batch, sched, lambda)?;
            let rec = StepRecord {
                step,
                t,
                clip,
                loss_total: g.value(l.total).item()? as f64,
                loss_diff: g.value(l.diff).item()? as f64,
                loss_motion: l.motion,
            };
            if let Err(e) = g.check_finite() {
                return Err(dump_failure(params, cfg, &rec, e.to_string()));
            }
            if !rec.loss_total.is_finite() {
                return Err(dump_failure(params, cfg, &rec, "non-finite loss".into()));
            }
            (rec, g.backward(l.total)?)
        };
        params.store.accumulate(&grads)?;
        adam.step(&mut params.store)?;
        if !params.all_finite() {
            return Err(dump_failure(params, cfg, &rec, "parameters became non-finite".into()));
        }
        on_step(&rec);
        report.records.push(rec);
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            if let Some(dir) = &cfg.out_dir {
                save_checkpoint(params, &dir.join(format!("checkpoint_{step:06}.ckpt")))?;
            }
        }
    }
    params.store.clear_grads();
    Ok(report)
}
