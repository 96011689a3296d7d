//! Dual-guided latent diffusion for video inpainting.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: tensors, reverse-mode autodiff, Adam.
//! * [`dataio`]: synthetic occluded clips, raw tensor files, PNG export.
//! * [`preprocess`]: masked frames plus the symmetric and past-frame guides.
//! * [`models`]: VAE, guidance encoders, token projectors, U-Net with fused
//!   dual cross-attention, checkpoints.
//! * [`diffusion`]: noise schedule, losses, training loop, reverse sampling.
//! * [`metrics`]: SSIM, temporal coherence, Fréchet feature distances.

pub mod dataio;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod preprocess;

pub use error::{Error, Result};
