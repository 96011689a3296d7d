//! Checkpoint files.
//!
//! Layout: the 8-byte magic `DMVRCK1\n`, a little-endian `u64` header
//! length, a UTF-8 JSON header (architecture, fusion and loss weights,
//! latent scale, schedule and its hash, and the ordered parameter list),
//! then one raw-tensor record per parameter in header order.

use std::fs;
use std::io::ErrorKind;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::dataio::raw;
use crate::diffusion::ScheduleSpec;
use crate::error::{bail, Error, Result};
use crate::numerics::ParamStore;

const MAGIC: &[u8; 8] = b"DMVRCK1\n";

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    alpha: [f64; 2],
    lambda: f64,
    latent_scale: f64,
    schedule: Option<ScheduleSpec>,
    schedule_hash: Option<String>,
    params: Vec<Entry>,
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    if !params.all_finite() {
        bail!(Numeric, "refusing to checkpoint non-finite parameters");
    }
    let header = Header {
        config: params.cfg,
        alpha: params.alpha(),
        lambda: params.lambda(),
        latent_scale: params.latent_scale,
        schedule: params.schedule,
        schedule_hash: params.schedule.map(|s| format!("{:016x}", s.hash())),
        params: params
            .store
            .iter()
            .map(|(_, p)| Entry { name: p.name.clone(), shape: p.value.shape().to_vec(), trainable: p.trainable })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(json.len() + 4 * params.store.num_scalars() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in params.store.iter() {
        raw::encode(&p.value, &mut out);
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Load a checkpoint. A missing file is a configuration error.
pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == ErrorKind::NotFound => {
            bail!(Config, "checkpoint {} does not exist", path.display())
        }
        Err(e) => return Err(e.into()),
    };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        bail!(Format, "{} is not a checkpoint", path.display());
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let Some(json) = bytes.get(16..16 + len) else { bail!(Format, "checkpoint header truncated") };
    let header: Header =
        serde_json::from_slice(json).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    header.config.validate()?;
    if let (Some(s), Some(h)) = (&header.schedule, &header.schedule_hash) {
        if format!("{:016x}", s.hash()) != *h {
            bail!(Format, "checkpoint schedule hash mismatch");
        }
    }
    let mut store = ParamStore::new();
    let mut pos = 16 + len;
    for e in &header.params {
        let (t, used) = raw::decode(&bytes[pos..])?;
        pos += used;
        if t.shape() != e.shape.as_slice() {
            bail!(Format, "parameter {} stored as {:?}, header says {:?}", e.name, t.shape(), e.shape);
        }
        if !t.is_finite() {
            bail!(Numeric, "parameter {} is not finite", e.name);
        }
        let id = store.add(e.name.clone(), t)?;
        store.get_mut(id).trainable = e.trainable;
    }
    if pos != bytes.len() {
        bail!(Format, "{} trailing bytes after the last parameter", bytes.len() - pos);
    }
    // Structural check against a fresh model of the same architecture.
    let reference = ModelParams::new(header.config, 0)?;
    let mut params = ModelParams { store, ..reference.clone() };
    params.store.clone().load_values(&reference.store).map_err(|_| {
        Error::Format("checkpoint parameters do not match the declared architecture".into())
    })?;
    if params.store.len() != reference.store.len() {
        bail!(Format, "checkpoint has {} parameters, architecture needs {}", params.store.len(), reference.store.len());
    }
    params.set_alpha(header.alpha[0], header.alpha[1])?;
    params.set_lambda(header.lambda)?;
    params.latent_scale = header.latent_scale;
    params.schedule = header.schedule;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ModelParams::new(ModelConfig::default(), 3).unwrap();
        p.set_alpha(0.7, 0.3).unwrap();
        p.set_lambda(0.25).unwrap();
        p.latent_scale = 1.7;
        p.schedule = Some(ScheduleSpec { t_max: 20, beta_start: 0.001, beta_end: 0.2 });
        p.store.set_trainable("vae.", false);
        let id = p.store.id("unet.conv_out.w").unwrap();
        let shape = p.store.value(id).shape().to_vec();
        p.store.get_mut(id).value = crate::numerics::Tensor::randn(&shape, &mut Rng::new(1));
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&p, &path).unwrap();
        let q = load_checkpoint(&path).unwrap();
        assert_eq!(q.alpha(), p.alpha());
        assert_eq!(q.lambda(), p.lambda());
        assert_eq!(q.latent_scale, p.latent_scale);
        assert_eq!(q.schedule, p.schedule);
        for ((_, a), (_, b)) in p.store.iter().zip(q.store.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
            assert_eq!(a.trainable, b.trainable);
        }
        let again = dir.path().join("again.ckpt");
        save_checkpoint(&q, &again).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn missing_checkpoint_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_checkpoint(&dir.path().join("nope")), Err(Error::Config(_))));
    }

    #[test]
    fn corrupt_checkpoint_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"DMVRCK1\n\x05\0\0\0\0\0\0\0{}").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }
}
