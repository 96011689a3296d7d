//! Run configuration: defaults, a flat `key = value` file, and overrides.

use std::fs;
use std::path::{Path, PathBuf};

use diffmvr_core::dataio::{CoverageSchedule, OccluderKind, SynthConfig};
use diffmvr_core::diffusion::{GuidanceMode, ScheduleSpec};
use diffmvr_core::models::{ModelConfig, VaeTrainConfig};
use diffmvr_core::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory of the subcommand.
    pub out: PathBuf,
    /// Dataset directory written by `gen`.
    pub data: PathBuf,
    /// Trained model checkpoint (inpaint, eval).
    pub checkpoint: Option<PathBuf>,
    /// Pretrained VAE checkpoint (train, ablate); pretrained inline if absent.
    pub vae: Option<PathBuf>,
    /// Inpainted clips to score (eval).
    pub inpainted: Option<PathBuf>,
    /// Dataset split used by inpaint and ablate evaluation.
    pub split: String,
    pub force: bool,

    pub clips: usize,
    pub p: usize,
    pub frames: usize,
    pub occluder: OccluderKind,
    pub clean_prob: f64,
    pub coverage_min: f64,
    pub coverage_max: f64,
    pub clean_threshold: f64,

    pub c_z: usize,
    pub p_e: usize,
    pub p_prime: usize,
    pub tokens: usize,

    pub t_max: usize,
    /// Explicit β range; both or neither. Default scales DDPM's to `t_max`.
    pub beta_start: Option<f64>,
    pub beta_end: Option<f64>,

    pub vae_steps: usize,
    pub vae_batch: usize,
    pub vae_lr: f64,
    pub kl_weight: f64,

    pub steps: usize,
    pub lr: f64,
    pub checkpoint_every: usize,
    pub alpha1: f64,
    pub lambda: f64,
    pub guidance: GuidanceMode,
    pub motion_loss: bool,

    pub shared_noise: bool,
    /// Clips of the split to inpaint (0 = all).
    pub eval_clips: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            data: PathBuf::from("data"),
            checkpoint: None,
            vae: None,
            inpainted: None,
            split: "test".into(),
            force: false,
            clips: 200,
            p: 32,
            frames: 8,
            occluder: OccluderKind::Mixed,
            clean_prob: 0.25,
            coverage_min: 0.06,
            coverage_max: 0.3,
            clean_threshold: 0.01,
            c_z: 4,
            p_e: 64,
            p_prime: 512,
            tokens: 8,
            t_max: 50,
            beta_start: None,
            beta_end: None,
            vae_steps: 600,
            vae_batch: 8,
            vae_lr: 2e-3,
            kl_weight: 1e-3,
            steps: 2000,
            lr: 1e-3,
            checkpoint_every: 0,
            alpha1: 0.5,
            lambda: 0.1,
            guidance: GuidanceMode::Dual,
            motion_loss: true,
            shared_noise: true,
            eval_clips: 0,
        }
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value {value:?} for {key}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

pub fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

impl RunConfig {
    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let opt_path = |v: &str| if v.is_empty() { None } else { Some(PathBuf::from(v)) };
        match key {
            "seed" => self.seed = num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "data" => self.data = PathBuf::from(value),
            "checkpoint" => self.checkpoint = opt_path(value),
            "vae" => self.vae = opt_path(value),
            "inpainted" => self.inpainted = opt_path(value),
            "split" => self.split = value.to_string(),
            "force" => self.force = parse_switch(key, value)?,
            "clips" => self.clips = num(key, value)?,
            "p" => self.p = num(key, value)?,
            "frames" => self.frames = num(key, value)?,
            "occluder" => {
                self.occluder = match value {
                    "rect" | "box" => OccluderKind::Rect,
                    "ellipse" | "segmented" => OccluderKind::Ellipse,
                    "mixed" => OccluderKind::Mixed,
                    _ => return Err(bad(key, value)),
                }
            }
            "clean_prob" => self.clean_prob = num(key, value)?,
            "coverage_min" => self.coverage_min = num(key, value)?,
            "coverage_max" => self.coverage_max = num(key, value)?,
            "clean_threshold" => self.clean_threshold = num(key, value)?,
            "c_z" => self.c_z = num(key, value)?,
            "p_e" => self.p_e = num(key, value)?,
            "p_prime" => self.p_prime = num(key, value)?,
            "tokens" => self.tokens = num(key, value)?,
            "t_max" => self.t_max = num(key, value)?,
            "beta_start" => self.beta_start = Some(num(key, value)?),
            "beta_end" => self.beta_end = Some(num(key, value)?),
            "vae_steps" => self.vae_steps = num(key, value)?,
            "vae_batch" => self.vae_batch = num(key, value)?,
            "vae_lr" => self.vae_lr = num(key, value)?,
            "kl_weight" => self.kl_weight = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "alpha1" => self.alpha1 = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "guidance" => self.guidance = GuidanceMode::parse(value)?,
            "motion_loss" => self.motion_loss = parse_switch(key, value)?,
            "loss" => {
                self.motion_loss = match value {
                    "diff-only" => false,
                    "diff+motion" => true,
                    _ => return Err(bad(key, value)),
                }
            }
            "shared_noise" => self.shared_noise = parse_switch(key, value)?,
            "eval_clips" => self.eval_clips = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Apply a `key = value` file. `#` starts a comment; blank lines are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::Config(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn alpha(&self) -> Result<[f64; 2]> {
        if !(0.0..=1.0).contains(&self.alpha1) {
            return Err(Error::Config(format!("alpha1 must lie in [0, 1], got {}", self.alpha1)));
        }
        Ok([self.alpha1, 1.0 - self.alpha1])
    }

    pub fn synth(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            p: self.p,
            frames: self.frames,
            occluder: self.occluder,
            coverage: CoverageSchedule::Random { clean_prob: self.clean_prob, min: self.coverage_min, max: self.coverage_max },
            clean_threshold: self.clean_threshold,
            seed,
            ..SynthConfig::default()
        }
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let m = ModelConfig {
            p: self.p,
            c_z: self.c_z,
            p_e: self.p_e,
            p_prime: self.p_prime,
            tokens: self.tokens,
            ..ModelConfig::default()
        };
        m.validate()?;
        Ok(m)
    }

    pub fn schedule(&self) -> Result<ScheduleSpec> {
        let spec = match (self.beta_start, self.beta_end) {
            (None, None) => ScheduleSpec::scaled(self.t_max),
            (Some(beta_start), Some(beta_end)) => ScheduleSpec { t_max: self.t_max, beta_start, beta_end },
            _ => return Err(Error::Config("set both beta_start and beta_end, or neither".into())),
        };
        spec.build()?;
        Ok(spec)
    }

    pub fn vae_train(&self) -> VaeTrainConfig {
        VaeTrainConfig { steps: self.vae_steps, batch: self.vae_batch, lr: self.vae_lr, kl_weight: self.kl_weight, seed: self.seed }
    }
}
