//! Networks: a small convolutional VAE, one guidance encoder and token
//! projector per guidance source, and a two-level U-Net whose attention
//! layers fuse both guidance sources.
//!
//! All forward passes are written against [`Graph`](crate::numerics::Graph)
//! and generic over the scalar type, so the same code trains in `f32` and
//! is checked against `f64` finite differences. The free functions in this
//! module are the plain-tensor entry points; they run inference graphs.

pub mod attention;
pub mod checkpoint;
pub mod guidance;
mod layers;
pub mod unet;
pub mod vae;

use serde::{Deserialize, Serialize};

pub use attention::{cross_attention, single_attention, GuideVars, TokenVars};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use guidance::{encode_guidance, project_tokens};
pub use unet::unet_predict_noise;
pub use vae::{pretrain_vae, vae_decode, vae_encode, vae_encode_sampled, vae_moments, VaeTrainConfig};

use crate::diffusion::ScheduleSpec;
use crate::error::{bail, Result};
use crate::numerics::{ParamStore, Real, Rng, Tensor};

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Frame channels.
    pub channels: usize,
    /// Frame side; must be a multiple of 8.
    pub p: usize,
    /// Latent channels.
    pub c_z: usize,
    /// VAE feature widths at `p/2` and `p/4`.
    pub vae_ch: [usize; 2],
    /// Guidance embedding size.
    pub p_e: usize,
    /// Hidden width of the token projector.
    pub proj_hidden: usize,
    /// Projector output size; split into `tokens` keys and `tokens` values.
    pub p_prime: usize,
    pub tokens: usize,
    /// U-Net widths at `p/4` and `p/8`.
    pub unet_ch: [usize; 2],
    pub temb_dim: usize,
    pub groups: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            p: 32,
            c_z: 4,
            vae_ch: [16, 32],
            p_e: 64,
            proj_hidden: 128,
            p_prime: 512,
            tokens: 8,
            unet_ch: [16, 32],
            temb_dim: 32,
            groups: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p < 16 || !self.p.is_multiple_of(8) {
            bail!(Config, "frame side {} must be a multiple of 8 and at least 16", self.p);
        }
        if self.channels == 0 || self.c_z == 0 || self.p_e == 0 || self.tokens == 0 || !self.temb_dim.is_multiple_of(2) {
            bail!(Config, "channels, c_z, p_e and tokens must be positive and temb_dim even");
        }
        if !self.p_prime.is_multiple_of(2 * self.tokens) || self.p_prime == 0 {
            bail!(
                Config,
                "p' = {} is not divisible into {} key and {} value tokens",
                self.p_prime,
                self.tokens,
                self.tokens
            );
        }
        let widths = self.vae_ch.iter().chain(&self.unet_ch);
        if self.groups == 0 || widths.clone().any(|&c| c == 0 || c % self.groups != 0) {
            bail!(Config, "feature widths must be positive multiples of {} groups", self.groups);
        }
        if !(self.unet_ch[0] + self.unet_ch[1]).is_multiple_of(self.groups) {
            bail!(Config, "U-Net skip concatenation width must divide into {} groups", self.groups);
        }
        Ok(())
    }

    /// Token width `D`.
    pub fn width(&self) -> usize {
        self.p_prime / (2 * self.tokens)
    }

    /// Latent side `p/4`.
    pub fn p_z(&self) -> usize {
        self.p / 4
    }

    pub fn frame_shape(&self) -> [usize; 3] {
        [self.channels, self.p, self.p]
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        [self.c_z, self.p_z(), self.p_z()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuideSource {
    Symmetric,
    Past,
}

impl GuideSource {
    pub(crate) fn encoder_prefix(self) -> &'static str {
        match self {
            GuideSource::Symmetric => "enc_sym",
            GuideSource::Past => "enc_past",
        }
    }

    pub(crate) fn projector_prefix(self) -> &'static str {
        match self {
            GuideSource::Symmetric => "proj_sym",
            GuideSource::Past => "proj_past",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    /// Encoded clean frame.
    Clean,
    /// Noised to diffusion step `t`.
    Noisy { t: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentMap {
    pub values: Tensor<f32>,
    pub provenance: Provenance,
}

impl LatentMap {
    pub fn clean(values: Tensor<f32>) -> Self {
        Self { values, provenance: Provenance::Clean }
    }

    pub fn noisy(values: Tensor<f32>, t: usize) -> Self {
        Self { values, provenance: Provenance::Noisy { t } }
    }

    pub fn timestep(&self) -> Option<usize> {
        match self.provenance {
            Provenance::Clean => None,
            Provenance::Noisy { t } => Some(t),
        }
    }
}

/// Key and value tokens, each `[k×D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceTokens {
    pub keys: Tensor<f32>,
    pub values: Tensor<f32>,
    pub source: GuideSource,
}

/// Guidance handed to the U-Net for one frame.
#[derive(Clone, Copy, Debug)]
pub enum Guides<'a> {
    Single(&'a GuidanceTokens),
    Dual(&'a GuidanceTokens, &'a GuidanceTokens),
}

/// Conditioning for the U-Net: the encoded masked frame and the mask pooled
/// to latent resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedLatentCond {
    pub context: Tensor<f32>,
    pub mask: Tensor<f32>,
}

impl MaskedLatentCond {
    pub fn is_occluded(&self) -> bool {
        self.mask.data().iter().any(|&v| v != 0.0)
    }
}

/// Every trainable tensor plus the fusion and loss weights.
#[derive(Clone, Debug)]
pub struct ModelParams<T: Real = f32> {
    pub cfg: ModelConfig,
    pub store: ParamStore<T>,
    alpha: [f64; 2],
    lambda: f64,
    /// Multiplier taking VAE latents to roughly unit variance.
    pub latent_scale: f64,
    /// Noise schedule the denoiser was trained with.
    pub schedule: Option<ScheduleSpec>,
}

impl ModelParams<f32> {
    /// Freshly initialised parameters. Initialisation consumes the seeded
    /// stream in a fixed order, so equal seeds give equal weights.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);
        {
            let mut init = layers::Init { store: &mut store, rng: &mut rng };
            vae::init(&mut init, &cfg)?;
            for src in [GuideSource::Symmetric, GuideSource::Past] {
                guidance::init(&mut init, &cfg, src)?;
            }
            unet::init(&mut init, &cfg)?;
        }
        Ok(Self { cfg, store, alpha: [0.5, 0.5], lambda: 0.1, latent_scale: 1.0, schedule: None })
    }
}

impl<T: Real> ModelParams<T> {
    pub fn alpha(&self) -> [f64; 2] {
        self.alpha
    }

    /// Set the fusion weights, normalised to sum to one.
    pub fn set_alpha(&mut self, a1: f64, a2: f64) -> Result<()> {
        if !(a1 >= 0.0 && a2 >= 0.0 && a1 + a2 > 0.0) || !(a1 + a2).is_finite() {
            bail!(Config, "fusion weights must be non-negative with a positive sum, got ({a1}, {a2})");
        }
        self.alpha = [a1 / (a1 + a2), a2 / (a1 + a2)];
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            bail!(Config, "motion-loss weight must be non-negative, got {lambda}");
        }
        self.lambda = lambda;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            cfg: self.cfg,
            store: self.store.cast(),
            alpha: self.alpha,
            lambda: self.lambda,
            latent_scale: self.latent_scale,
            schedule: self.schedule,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.store.all_finite()
    }
}

pub(crate) fn expect_shape(t: &Tensor<f32>, want: &[usize], what: &str) -> Result<()> {
    if t.shape() != want {
        bail!(Dimension, "{what} has shape {:?}, expected {want:?}", t.shape());
    }
    Ok(())
}
