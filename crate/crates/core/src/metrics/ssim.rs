//! Windowed SSIM with a uniform 7×7 window over valid positions.

use crate::error::{bail, Result};
use crate::numerics::Tensor;

pub const WINDOW: usize = 7;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

fn check(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    if a.shape() != b.shape() {
        bail!(Dimension, "ssim inputs {:?} and {:?} differ in shape", a.shape(), b.shape());
    }
    a.expect_rank(3, "ssim input")?;
    let s = a.shape();
    if s[1] < WINDOW || s[2] < WINDOW {
        bail!(Dimension, "ssim needs at least {WINDOW}×{WINDOW} pixels, got {}×{}", s[1], s[2]);
    }
    Ok((s[0], s[1], s[2]))
}

/// Per-window SSIM map for one channel, row-major over valid window origins.
fn channel_map(a: &[f32], b: &[f32], h: usize, w: usize) -> Vec<f64> {
    let n = (WINDOW * WINDOW) as f64;
    let (oh, ow) = (h - WINDOW + 1, w - WINDOW + 1);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..WINDOW {
                let row = (y + dy) * w + x;
                for i in row..row + WINDOW {
                    let (p, q) = (a[i] as f64, b[i] as f64);
                    sa += p;
                    sb += q;
                    saa += p * p;
                    sbb += q * q;
                    sab += p * q;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            // Population moments; clamp tiny negative rounding in the variances.
            let va = (saa / n - ma * ma).max(0.0);
            let vb = (sbb / n - mb * mb).max(0.0);
            let cov = sab / n - ma * mb;
            out.push(((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2)));
        }
    }
    out
}

fn maps(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    let (c, h, w) = check(a, b)?;
    let hw = h * w;
    let m = (0..c).map(|k| channel_map(&a.data()[k * hw..(k + 1) * hw], &b.data()[k * hw..(k + 1) * hw], h, w)).collect();
    Ok((m, h, w))
}

/// Mean SSIM over all valid windows and channels.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    if a.data() == b.data() && a.shape() == b.shape() {
        check(a, b)?;
        return Ok(1.0);
    }
    let (m, _, _) = maps(a, b)?;
    let n: usize = m.iter().map(Vec::len).sum();
    Ok(m.iter().flatten().sum::<f64>() / n as f64)
}

/// Mean SSIM over the windows that contain at least one masked pixel;
/// `None` when the mask is empty.
pub fn ssim_masked(a: &Tensor<f32>, b: &Tensor<f32>, mask: &Tensor<f32>) -> Result<Option<f64>> {
    let (_, h, w) = check(a, b)?;
    if mask.len() != h * w {
        bail!(Dimension, "mask {:?} does not match {h}×{w} frames", mask.shape());
    }
    let md = mask.data();
    let (oh, ow) = (h - WINDOW + 1, w - WINDOW + 1);
    let hit: Vec<bool> = (0..oh * ow)
        .map(|o| {
            let (y, x) = (o / ow, o % ow);
            (0..WINDOW).any(|dy| md[(y + dy) * w + x..(y + dy) * w + x + WINDOW].iter().any(|&v| v > 0.0))
        })
        .collect();
    let count = hit.iter().filter(|&&h| h).count();
    if count == 0 {
        return Ok(None);
    }
    let (m, _, _) = maps(a, b)?;
    let total: f64 = m.iter().map(|ch| ch.iter().zip(&hit).filter(|(_, &h)| h).map(|(v, _)| v).sum::<f64>()).sum();
    Ok(Some(total / (count * m.len()) as f64))
}
