//! Noise schedule, forward noising, the combined training loss, the
//! training loop, and ancestral reverse sampling for inpainting.
//!
//! Diffusion runs on VAE latents multiplied by the model's latent scale.
//! Timesteps are 1-based (`1..=t_max`); step 0 denotes the clean latent.

mod batch;
mod inpaint;
mod losses;
mod schedule;
mod train;

pub use batch::{guide_images, latent_cond, prepare_clip, ClipBatch, GuidanceMode, PreparedClip, PreparedFrame};
pub use inpaint::{composite, inpaint_clip, InpaintConfig, Inpainted};
pub use losses::{loss_diff, loss_graph, loss_motion, loss_total, motion_loss, noise_loss, LossVars};
pub use schedule::{
    build_schedule, ddpm_update, diffuse, forward_diffuse, predict_x0, reverse_step, NoiseSchedule, ScheduleSpec,
};
pub use train::{train, train_with, StepRecord, TrainConfig, TrainReport};
