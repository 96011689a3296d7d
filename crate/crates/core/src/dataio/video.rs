use crate::error::{bail, Result};
use crate::numerics::Tensor;

/// An ordered clip of `[c×p×p]` frames with binary occlusion masks
/// (`1` = occluded) and, for synthetic data, the unoccluded truth.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence {
    frames: Vec<Tensor<f32>>,
    masks: Vec<Tensor<f32>>,
    truth: Option<Vec<Tensor<f32>>>,
    pub fps: f32,
}

impl VideoSequence {
    pub fn new(
        frames: Vec<Tensor<f32>>,
        masks: Vec<Tensor<f32>>,
        truth: Option<Vec<Tensor<f32>>>,
        fps: f32,
    ) -> Result<Self> {
        let Some(first) = frames.first() else { bail!(Contract, "video has no frames") };
        let s = first.shape().to_vec();
        if s.len() != 3 || s[1] != s[2] {
            bail!(Dimension, "frames must be [c, p, p], got {s:?}");
        }
        if masks.len() != frames.len() {
            bail!(Contract, "{} masks for {} frames", masks.len(), frames.len());
        }
        for (t, (f, m)) in frames.iter().zip(&masks).enumerate() {
            if f.shape() != s.as_slice() {
                bail!(Dimension, "frame {t} shape {:?} differs from {s:?}", f.shape());
            }
            if m.shape() != [1, s[1], s[2]] {
                bail!(Dimension, "mask {t} shape {:?} must be [1, {}, {}]", m.shape(), s[1], s[2]);
            }
            if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                bail!(Contract, "mask {t} is not binary");
            }
        }
        if let Some(tr) = &truth {
            if tr.len() != frames.len() || tr.iter().any(|f| f.shape() != s.as_slice()) {
                bail!(Contract, "truth frames do not align with frames");
            }
        }
        Ok(Self { frames, masks, truth, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Tensor<f32>] {
        &self.frames
    }

    pub fn masks(&self) -> &[Tensor<f32>] {
        &self.masks
    }

    pub fn truth(&self) -> Option<&[Tensor<f32>]> {
        self.truth.as_deref()
    }

    pub fn frame(&self, t: usize) -> &Tensor<f32> {
        &self.frames[t]
    }

    pub fn mask(&self, t: usize) -> &Tensor<f32> {
        &self.masks[t]
    }

    pub fn channels(&self) -> usize {
        self.frames[0].shape()[0]
    }

    /// Frame side `p`.
    pub fn side(&self) -> usize {
        self.frames[0].shape()[1]
    }

    /// Fraction of occluded pixels in frame `t`.
    pub fn coverage(&self, t: usize) -> f64 {
        self.masks[t].data().iter().map(|&v| v as f64).sum::<f64>() / self.masks[t].len() as f64
    }

    pub fn coverages(&self) -> Vec<f64> {
        (0..self.len()).map(|t| self.coverage(t)).collect()
    }

    pub fn is_occluded(&self, t: usize) -> bool {
        self.masks[t].data().iter().any(|&v| v != 0.0)
    }

    pub fn with_frames(&self, frames: Vec<Tensor<f32>>) -> Result<Self> {
        Self::new(frames, self.masks.clone(), self.truth.clone(), self.fps)
    }

    pub fn without_truth(&self) -> Self {
        Self { truth: None, ..self.clone() }
    }
}
