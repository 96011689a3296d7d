//! Command-line orchestration for the DiffMVR pipeline: dataset generation,
//! VAE pretraining, denoiser training, inpainting, evaluation and ablation.

pub mod ablate;
pub mod commands;
pub mod config;

use diffmvr_core::Error;

pub use config::RunConfig;

/// Process exit code for a failure: 2 for configuration and contract
/// problems, 3 for numeric aborts, 4 for I/O and file-format errors.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Contract(_) | Error::Dimension(_) | Error::Guidance(_) => 2,
        Error::Numeric(_) => 3,
        Error::Io(_) | Error::Format(_) => 4,
    }
}
