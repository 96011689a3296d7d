//! Raw tensor container: `VTEN1`, `u8` rank, rank × `u32` LE extents, then
//! `f32` LE payload in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{bail, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 5] = b"VTEN1";

pub fn encode(t: &Tensor<f32>, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Decode one tensor from the front of `bytes`, returning it and the number
/// of bytes consumed.
pub fn decode(bytes: &[u8]) -> Result<(Tensor<f32>, usize)> {
    if bytes.len() < MAGIC.len() + 1 {
        bail!(Format, "raw tensor truncated before header ({} bytes)", bytes.len());
    }
    if &bytes[..5] != MAGIC {
        bail!(Format, "bad raw tensor magic");
    }
    let rank = bytes[5] as usize;
    if rank == 0 {
        bail!(Format, "raw tensor rank 0");
    }
    let mut pos = 6;
    if bytes.len() < pos + 4 * rank {
        bail!(Format, "raw tensor truncated inside extents");
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        if d == 0 {
            bail!(Format, "raw tensor has zero extent");
        }
        shape.push(d);
        pos += 4;
    }
    let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let Some(n) = n else { bail!(Format, "raw tensor extents overflow") };
    let end = n.checked_mul(4).and_then(|b| b.checked_add(pos));
    match end {
        Some(end) if end <= bytes.len() => {
            let data = bytes[pos..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Ok((Tensor::new(&shape, data)?, end))
        }
        _ => bail!(Format, "raw tensor payload shorter than extents {shape:?} require"),
    }
}

pub fn write_raw(t: &Tensor<f32>, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(6 + 4 * t.rank() + 4 * t.len());
    encode(t, &mut buf);
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Read a file holding exactly one tensor.
pub fn read_raw(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path)?;
    let (t, used) = decode(&bytes)?;
    if used != bytes.len() {
        bail!(Format, "{} trailing bytes after raw tensor in {}", bytes.len() - used, path.display());
    }
    Ok(t)
}
