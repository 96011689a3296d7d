//! 8-bit PNG export and import.
//!
//! Quantization is round-half-up: `q = floor(255·v + 0.5)`. Values outside
//! `[0, 1]` are rejected rather than clamped.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{bail, Error, Result};
use crate::numerics::Tensor;

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Format(format!("png: {e}"))
}

pub fn quantize(v: f32) -> Result<u8> {
    if !(0.0..=1.0).contains(&v) {
        bail!(Contract, "pixel value {v} outside [0, 1]");
    }
    Ok((v as f64 * 255.0 + 0.5).floor() as u8)
}

/// Interleave a `[c×h×w]` tensor (c = 1 or 3) into 8-bit samples.
pub fn to_bytes(img: &Tensor<f32>) -> Result<(Vec<u8>, usize, usize, usize)> {
    let s = img.shape();
    if s.len() != 3 || !(s[0] == 1 || s[0] == 3) {
        bail!(Dimension, "image export needs [1|3, h, w], got {s:?}");
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = vec![0u8; c * h * w];
    for ch in 0..c {
        for i in 0..h * w {
            out[i * c + ch] = quantize(img.data()[ch * h * w + i])?;
        }
    }
    Ok((out, c, h, w))
}

pub fn write_png(img: &Tensor<f32>, path: &Path) -> Result<()> {
    let (bytes, c, h, w) = to_bytes(img)?;
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, w as u32, h as u32);
    enc.set_color(if c == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale });
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&bytes).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(())
}

/// Read an 8-bit grayscale or RGB PNG into a `[c×h×w]` tensor in `[0, 1]`.
pub fn read_png(path: &Path) -> Result<Tensor<f32>> {
    let dec = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = dec.read_info().map_err(png_err)?;
    let size = reader.output_buffer_size().ok_or_else(|| png_err("image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.bit_depth != png::BitDepth::Eight {
        bail!(Format, "{}: only 8-bit PNGs are supported", path.display());
    }
    let c = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => bail!(Format, "{}: unsupported color type {other:?}", path.display()),
    };
    let (h, w) = (info.height as usize, info.width as usize);
    let bytes = &buf[..info.buffer_size()];
    let mut data = vec![0f32; c * h * w];
    for ch in 0..c {
        for i in 0..h * w {
            data[ch * h * w + i] = bytes[i * c + ch] as f32 / 255.0;
        }
    }
    Tensor::new(&[c, h, w], data)
}

/// Frame with occluded pixels tinted red.
pub fn mask_overlay(frame: &Tensor<f32>, mask: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = frame.shape();
    let hw = s[1] * s[2];
    if mask.len() != hw {
        bail!(Dimension, "overlay mask {:?} vs frame {s:?}", mask.shape());
    }
    let mut rgb = if s[0] == 3 { frame.clone() } else { Tensor::concat0(&[frame, frame, frame])? };
    let m = mask.data();
    let d = rgb.data_mut();
    for i in 0..hw {
        if m[i] > 0.5 {
            d[i] = 0.5 * d[i] + 0.5;
            d[hw + i] *= 0.5;
            d[2 * hw + i] *= 0.5;
        }
    }
    Ok(rgb)
}

/// Lay `[c×h×w]` images side by side with a 1-pixel white gutter.
pub fn hstack(images: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = images.first().ok_or_else(|| Error::Dimension("empty image row".into()))?;
    let (c, h, w) = (first.shape()[0], first.shape()[1], first.shape()[2]);
    let n = images.len();
    let total_w = n * w + (n - 1);
    let mut out = Tensor::full(&[c, h, total_w], 1.0f32);
    for (k, img) in images.iter().enumerate() {
        if img.shape() != first.shape() {
            bail!(Dimension, "grid image {:?} vs {:?}", img.shape(), first.shape());
        }
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out.set(&[ch, y, k * (w + 1) + x], img.at(&[ch, y, x]));
                }
            }
        }
    }
    Ok(out)
}

/// Stack rows vertically with a 1-pixel white gutter.
pub fn vstack(rows: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = rows.first().ok_or_else(|| Error::Dimension("empty grid".into()))?;
    let (c, h, w) = (first.shape()[0], first.shape()[1], first.shape()[2]);
    let total_h = rows.len() * h + rows.len() - 1;
    let mut out = Tensor::full(&[c, total_h, w], 1.0f32);
    for (k, r) in rows.iter().enumerate() {
        if r.shape() != first.shape() {
            bail!(Dimension, "grid row {:?} vs {:?}", r.shape(), first.shape());
        }
        let plane = h * w;
        for ch in 0..c {
            let dst = ch * total_h * w + k * (h + 1) * w;
            out.data_mut()[dst..dst + plane].copy_from_slice(&r.data()[ch * plane..(ch + 1) * plane]);
        }
    }
    Ok(out)
}
