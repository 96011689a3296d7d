//! The `gen`, `pretrain-vae`, `train`, `inpaint` and `eval` subcommands.
//!
//! Dataset layout written by `gen`:
//!
//! ```text
//! <data>/clips/clip_NNNN/   one stored clip each
//! <data>/{all,train,val,test}.tsv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use diffmvr_core::dataio::image::{hstack, vstack, write_png};
use diffmvr_core::dataio::{generate_clip, load_clip, read_manifest, save_clip, write_manifest, ManifestEntry, VideoSequence};
use diffmvr_core::diffusion::{
    inpaint_clip, prepare_clip, train_with, InpaintConfig, Inpainted, PreparedClip, TrainConfig, TrainReport,
};
use diffmvr_core::metrics::{evaluate, EvalClip, MetricReport};
use diffmvr_core::models::{load_checkpoint, pretrain_vae, save_checkpoint, ModelParams};
use diffmvr_core::numerics::{Rng, Tensor};
use diffmvr_core::preprocess::make_masked_frame;
use diffmvr_core::{Error, Result};

use crate::config::RunConfig;

/// Train/val/test clip counts for a 70/10/20 split; test takes the remainder.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = (n as f64 * 0.7).round() as usize;
    let val = ((n as f64 * 0.1).round() as usize).min(n - train);
    (train, val, n - train - val)
}

fn clip_seed(seed: u64, i: usize) -> u64 {
    Rng::new(seed).fork(i as u64).next_u64()
}

fn is_nonempty_dir(p: &Path) -> bool {
    fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenSummary {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Generate `cfg.clips` synthetic clips into `cfg.out` with split manifests.
pub fn cmd_gen(cfg: &RunConfig) -> Result<GenSummary> {
    if cfg.clips == 0 {
        return Err(Error::Config("clips must be positive".into()));
    }
    cfg.synth(0).validate()?;
    if is_nonempty_dir(&cfg.out) {
        if !cfg.force {
            return Err(Error::Config(format!("{} is not empty (use --force to overwrite)", cfg.out.display())));
        }
        let clips = cfg.out.join("clips");
        if clips.exists() {
            fs::remove_dir_all(&clips)?;
        }
    }
    fs::create_dir_all(&cfg.out)?;
    let mut entries = Vec::with_capacity(cfg.clips);
    for i in 0..cfg.clips {
        let v = generate_clip(&cfg.synth(clip_seed(cfg.seed, i)))?;
        let rel = PathBuf::from("clips").join(format!("clip_{i:04}"));
        save_clip(&v, &cfg.out.join(&rel))?;
        entries.push(ManifestEntry { clip_id: format!("clip_{i:04}"), path: rel, frames: v.len(), p: v.side() });
    }
    // Seeded shuffle, then contiguous 70/10/20 slices.
    let mut order: Vec<usize> = (0..cfg.clips).collect();
    let mut rng = Rng::new(cfg.seed ^ 0x5eed_0005);
    for i in (1..order.len()).rev() {
        order.swap(i, rng.below(i + 1));
    }
    let (n_train, n_val, n_test) = split_counts(cfg.clips);
    let pick = |r: std::ops::Range<usize>| {
        let mut idx: Vec<usize> = order[r].to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| entries[i].clone()).collect::<Vec<_>>()
    };
    write_manifest(&entries, &cfg.out.join("all.tsv"))?;
    write_manifest(&pick(0..n_train), &cfg.out.join("train.tsv"))?;
    write_manifest(&pick(n_train..n_train + n_val), &cfg.out.join("val.tsv"))?;
    write_manifest(&pick(n_train + n_val..cfg.clips), &cfg.out.join("test.tsv"))?;
    Ok(GenSummary { train: n_train, val: n_val, test: n_test })
}

/// Clips listed in `<dir>/<split>.tsv`, in manifest order.
pub fn load_split(dir: &Path, split: &str) -> Result<Vec<(String, VideoSequence)>> {
    let path = dir.join(format!("{split}.tsv"));
    if !path.exists() {
        return Err(Error::Config(format!("no manifest {} (run gen first)", path.display())));
    }
    read_manifest(&path)?
        .into_iter()
        .map(|e| {
            let p = if e.path.is_absolute() { e.path.clone() } else { dir.join(&e.path) };
            let v = load_clip(&p)?;
            if v.len() != e.frames || v.side() != e.p {
                return Err(Error::Format(format!("clip {} does not match its manifest entry", e.clip_id)));
            }
            Ok((e.clip_id, v))
        })
        .collect()
}

fn require_checkpoint(cfg: &RunConfig) -> Result<ModelParams> {
    let path = cfg.checkpoint.as_ref().ok_or_else(|| Error::Config("a model checkpoint is required (checkpoint = PATH)".into()))?;
    load_checkpoint(path)
}

fn train_frames(clips: &[(String, VideoSequence)]) -> Vec<Tensor<f32>> {
    clips.iter().flat_map(|(_, v)| v.frames().iter().cloned()).collect()
}

/// Fresh parameters with a pretrained, frozen VAE: loaded from `cfg.vae`
/// when set, otherwise pretrained on the training frames.
pub fn vae_params(cfg: &RunConfig, train: &[(String, VideoSequence)]) -> Result<ModelParams> {
    let model = cfg.model()?;
    match &cfg.vae {
        Some(path) => {
            let loaded = load_checkpoint(path)?;
            if loaded.cfg != model {
                return Err(Error::Config(format!("VAE checkpoint {} was built for a different architecture", path.display())));
            }
            let mut p = ModelParams::new(model, cfg.seed)?;
            for (_, param) in loaded.store.iter().filter(|(_, q)| q.name.starts_with("vae.")) {
                let dst = p.store.id(&param.name).ok_or_else(|| Error::Format(format!("unknown parameter {}", param.name)))?;
                p.store.get_mut(dst).value = param.value.clone();
            }
            p.store.set_trainable("vae.", false);
            p.latent_scale = loaded.latent_scale;
            Ok(p)
        }
        None => {
            let mut p = ModelParams::new(model, cfg.seed)?;
            pretrain_vae(&mut p, &train_frames(train), &cfg.vae_train())?;
            Ok(p)
        }
    }
}

/// Pretrain and freeze the VAE; writes `vae.ckpt` and `vae_loss.csv`.
pub fn cmd_pretrain_vae(cfg: &RunConfig) -> Result<PathBuf> {
    let train = load_split(&cfg.data, "train")?;
    let mut p = ModelParams::new(cfg.model()?, cfg.seed)?;
    let losses = pretrain_vae(&mut p, &train_frames(&train), &cfg.vae_train())?;
    fs::create_dir_all(&cfg.out)?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    fs::write(cfg.out.join("vae_loss.csv"), csv)?;
    let path = cfg.out.join("vae.ckpt");
    save_checkpoint(&p, &path)?;
    Ok(path)
}

pub fn prepare(cfg: &RunConfig, params: &ModelParams, clips: &[(String, VideoSequence)]) -> Result<Vec<PreparedClip>> {
    clips.iter().map(|(_, v)| prepare_clip(params, v, cfg.guidance, cfg.clean_threshold)).collect()
}

/// Train on a prepared set starting from `params`, honouring the guidance
/// and loss modes. Progress goes to stderr every 100 steps.
pub fn train_prepared(cfg: &RunConfig, params: &mut ModelParams, data: &[PreparedClip], label: &str) -> Result<TrainReport> {
    let [a1, a2] = cfg.alpha()?;
    params.set_alpha(a1, a2)?;
    params.set_lambda(cfg.lambda)?;
    let sched = cfg.schedule()?.build()?;
    let tc = TrainConfig {
        steps: cfg.steps,
        lr: cfg.lr,
        seed: cfg.seed,
        motion_loss: cfg.motion_loss,
        checkpoint_every: cfg.checkpoint_every,
        out_dir: Some(cfg.out.clone()),
    };
    let steps = cfg.steps;
    train_with(data, params, &sched, &tc, |r| {
        if r.step % 100 == 0 || r.step == steps {
            eprintln!("[{label}] step {}/{steps} loss {:.3} (diff {:.3})", r.step, r.loss_total, r.loss_diff);
        }
    })
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub report: TrainReport,
}

/// Train the denoiser; writes `model.ckpt`, `loss.csv` and `loss_by_t.csv`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let train = load_split(&cfg.data, "train")?;
    let mut params = vae_params(cfg, &train)?;
    let data = prepare(cfg, &params, &train)?;
    fs::create_dir_all(&cfg.out)?;
    let report = train_prepared(cfg, &mut params, &data, "train")?;
    fs::write(cfg.out.join("loss.csv"), report.to_csv())?;
    fs::write(cfg.out.join("loss_by_t.csv"), report.per_timestep_csv())?;
    let checkpoint = cfg.out.join("model.ckpt");
    save_checkpoint(&params, &checkpoint)?;
    Ok(TrainSummary { checkpoint, report })
}

/// Grid rows for every inpainted frame: input, masked input, guide 1,
/// guide 2, output and (when known) truth.
pub fn grid(input: &VideoSequence, result: &Inpainted) -> Result<Option<Tensor<f32>>> {
    let mut rows = Vec::new();
    for t in 0..input.len() {
        let Some((g1, g2)) = &result.guides[t] else { continue };
        let masked = make_masked_frame(input.frame(t), input.mask(t))?.context;
        let mut cols = vec![input.frame(t).clone(), masked, g1.clone(), g2.clone(), result.video.frame(t).clone()];
        if let Some(tr) = input.truth() {
            cols.push(tr[t].clone());
        }
        rows.push(hstack(&cols)?);
    }
    if rows.is_empty() {
        return Ok(None);
    }
    Ok(Some(vstack(&rows)?))
}

pub fn inpaint_config(cfg: &RunConfig, index: usize) -> InpaintConfig {
    InpaintConfig {
        mode: cfg.guidance,
        shared_noise: cfg.shared_noise,
        seed: clip_seed(cfg.seed, index),
        clean_threshold: cfg.clean_threshold,
    }
}

/// First `eval_clips` clips of the configured split (all when 0).
pub fn eval_subset(cfg: &RunConfig, clips: Vec<(String, VideoSequence)>) -> Vec<(String, VideoSequence)> {
    let n = if cfg.eval_clips == 0 { clips.len() } else { cfg.eval_clips.min(clips.len()) };
    clips.into_iter().take(n).collect()
}

/// Inpaint `clips` with `params`, writing each result under `out/inpainted`
/// and its grid under `out/grids`.
pub fn inpaint_into(
    cfg: &RunConfig,
    params: &ModelParams,
    clips: &[(String, VideoSequence)],
    out: &Path,
) -> Result<Vec<(String, VideoSequence)>> {
    let spec = params.schedule.unwrap_or(cfg.schedule()?);
    let sched = spec.build()?;
    let dir = out.join("inpainted");
    let grids = out.join("grids");
    fs::create_dir_all(&dir)?;
    fs::create_dir_all(&grids)?;
    let mut entries = Vec::with_capacity(clips.len());
    let mut results = Vec::with_capacity(clips.len());
    for (i, (id, v)) in clips.iter().enumerate() {
        let res = inpaint_clip(v, params, &sched, &inpaint_config(cfg, i))?;
        match grid(v, &res)? {
            Some(g) => write_png(&g, &grids.join(format!("{id}.png")))?,
            None => eprintln!("{id}: no occluded frames, passed through unchanged"),
        }
        let rel = PathBuf::from(id);
        save_clip(&res.video, &dir.join(&rel))?;
        entries.push(ManifestEntry { clip_id: id.clone(), path: rel, frames: v.len(), p: v.side() });
        results.push((id.clone(), res.video));
    }
    write_manifest(&entries, &dir.join("clips.tsv"))?;
    Ok(results)
}

/// Inpaint the configured split with a trained checkpoint.
pub fn cmd_inpaint(cfg: &RunConfig) -> Result<Vec<(String, VideoSequence)>> {
    let params = require_checkpoint(cfg)?;
    let clips = eval_subset(cfg, load_split(&cfg.data, &cfg.split)?);
    inpaint_into(cfg, &params, &clips, &cfg.out)
}

/// Score inpainted clips against the ground truth they carry.
pub fn score(params: &ModelParams, clips: &[(String, VideoSequence)]) -> Result<MetricReport> {
    let inputs = clips
        .iter()
        .map(|(id, v)| {
            let truth = v.truth().ok_or_else(|| Error::Contract(format!("clip {id} has no ground truth to score against")))?;
            Ok(EvalClip { name: id, output: v, truth })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate(params, &inputs)
}

/// Evaluate `inpainted` (default `<out>/inpainted`); writes `metrics.csv`
/// and `metrics.txt`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<MetricReport> {
    let params = require_checkpoint(cfg)?;
    let dir = cfg.inpainted.clone().unwrap_or_else(|| cfg.out.join("inpainted"));
    let clips = load_split(&dir, "clips")?;
    let report = score(&params, &clips)?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("metrics.csv"), report.to_csv())?;
    fs::write(cfg.out.join("metrics.txt"), report.to_table())?;
    Ok(report)
}
