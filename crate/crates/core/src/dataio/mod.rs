//! Synthetic clips, on-disk tensor and image formats, dataset layout.
//!
//! A stored clip is a directory holding `frames.vten` (`[N, c, p, p]`),
//! `masks.vten` (`[N, 1, p, p]`), optionally `truth.vten`, and
//! `meta.json`. Externally annotated clips may supply `mask_%04d.png`
//! files instead of `masks.vten`.

pub mod image;
pub mod manifest;
pub mod raw;
pub mod synth;
mod video;

use std::fs;
use std::path::Path;

pub use manifest::{read_manifest, write_manifest, ManifestEntry};
pub use raw::{read_raw, write_raw};
pub use synth::{generate_clip, CoverageSchedule, OccluderKind, SynthConfig};
pub use video::VideoSequence;

use crate::error::{bail, Result};
use crate::numerics::Tensor;

#[derive(serde::Serialize, serde::Deserialize)]
struct ClipMeta {
    fps: f32,
}

fn stack(frames: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let refs: Vec<&Tensor<f32>> = frames.iter().collect();
    let mut shape = vec![frames.len()];
    shape.extend_from_slice(frames[0].shape());
    Tensor::concat0(&refs)?.reshape(&shape)
}

fn unstack(t: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
    if t.rank() != 4 {
        bail!(Format, "clip tensor must be rank 4, got {:?}", t.shape());
    }
    let inner = &t.shape()[1..];
    let n: usize = inner.iter().product();
    t.data().chunks(n).map(|c| Tensor::new(inner, c.to_vec())).collect()
}

pub fn save_clip(v: &VideoSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_raw(&stack(v.frames())?, &dir.join("frames.vten"))?;
    write_raw(&stack(v.masks())?, &dir.join("masks.vten"))?;
    if let Some(tr) = v.truth() {
        write_raw(&stack(tr)?, &dir.join("truth.vten"))?;
    }
    let meta = serde_json::to_string(&ClipMeta { fps: v.fps }).expect("meta serializes");
    fs::write(dir.join("meta.json"), meta)?;
    Ok(())
}

pub fn load_clip(dir: &Path) -> Result<VideoSequence> {
    let frames = unstack(&read_raw(&dir.join("frames.vten"))?)?;
    let mask_path = dir.join("masks.vten");
    let masks = if mask_path.exists() {
        unstack(&read_raw(&mask_path)?)?
    } else {
        load_mask_pngs(dir, frames.len())?
    };
    let truth_path = dir.join("truth.vten");
    let truth = if truth_path.exists() { Some(unstack(&read_raw(&truth_path)?)?) } else { None };
    let fps = match fs::read_to_string(dir.join("meta.json")) {
        Ok(s) => serde_json::from_str::<ClipMeta>(&s)
            .map_err(|e| crate::Error::Format(format!("meta.json: {e}")))?
            .fps,
        Err(_) => 20.0,
    };
    VideoSequence::new(frames, masks, truth, fps)
}

/// Ingest per-frame annotation masks (`mask_%04d.png`, nonzero = occluded).
pub fn load_mask_pngs(dir: &Path, n: usize) -> Result<Vec<Tensor<f32>>> {
    (0..n)
        .map(|t| {
            let m = image::read_png(&dir.join(format!("mask_{t:04}.png")))?;
            let first = m.channel(0)?;
            Ok(first.map(|v| if v > 0.5 { 1.0 } else { 0.0 }))
        })
        .collect()
}

/// Write `frame_%04d.png`, `mask_%04d.png` and `overlay_%04d.png` for
/// every frame. Values outside `[0, 1]` are a contract error.
pub fn export_frames(v: &VideoSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for t in 0..v.len() {
        image::write_png(v.frame(t), &dir.join(format!("frame_{t:04}.png")))?;
        image::write_png(v.mask(t), &dir.join(format!("mask_{t:04}.png")))?;
        let overlay = image::mask_overlay(v.frame(t), v.mask(t))?;
        image::write_png(&overlay, &dir.join(format!("overlay_{t:04}.png")))?;
    }
    Ok(())
}
