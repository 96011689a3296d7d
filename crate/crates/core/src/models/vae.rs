//! Convolutional VAE: two stride-2 stages from `[c×p×p]` down to a
//! `[c_z×p/4×p/4]` latent, and a mirrored nearest-upsampling decoder ending
//! in a sigmoid.

use super::layers::{conv, norm, Init};
use super::{expect_shape, LatentMap, ModelConfig, ModelParams, Provenance};
use crate::error::{bail, Result};
use crate::numerics::{Adam, AdamConfig, Graph, Real, Rng, Tensor, Var};

pub(crate) fn init(b: &mut Init<'_>, cfg: &ModelConfig) -> Result<()> {
    let [c0, c1] = cfg.vae_ch;
    b.conv("vae.enc.conv0", c0, cfg.channels, 3, 1.0)?;
    b.conv("vae.enc.down1", c1, c0, 3, 1.0)?;
    b.norm("vae.enc.norm1", c1)?;
    b.conv("vae.enc.down2", c1, c1, 3, 1.0)?;
    b.norm("vae.enc.norm2", c1)?;
    b.conv("vae.enc.head", 2 * cfg.c_z, c1, 3, 0.5)?;
    b.conv("vae.dec.conv_in", c1, cfg.c_z, 3, 1.0)?;
    b.norm("vae.dec.norm0", c1)?;
    b.conv("vae.dec.up1", c0, c1, 3, 1.0)?;
    b.norm("vae.dec.norm1", c0)?;
    b.conv("vae.dec.up2", c0, c0, 3, 1.0)?;
    b.conv("vae.dec.out", cfg.channels, c0, 3, 1.0)
}

/// Encoder graph: returns `(μ, log σ²)`, each `[c_z×p/4×p/4]`.
pub fn encode_graph<T: Real>(g: &mut Graph<'_, T>, cfg: &ModelConfig, x: Var) -> Result<(Var, Var)> {
    let h = conv(g, "vae.enc.conv0", x, 1)?;
    let h = g.silu(h);
    let h = conv(g, "vae.enc.down1", h, 2)?;
    let h = norm(g, "vae.enc.norm1", h, cfg.groups)?;
    let h = g.silu(h);
    let h = conv(g, "vae.enc.down2", h, 2)?;
    let h = norm(g, "vae.enc.norm2", h, cfg.groups)?;
    let h = g.silu(h);
    let h = conv(g, "vae.enc.head", h, 1)?;
    let mu = g.narrow0(h, 0, cfg.c_z)?;
    let logvar = g.narrow0(h, cfg.c_z, cfg.c_z)?;
    Ok((mu, logvar))
}

/// Decoder graph: latent to frame in `(0, 1)`.
pub fn decode_graph<T: Real>(g: &mut Graph<'_, T>, cfg: &ModelConfig, z: Var) -> Result<Var> {
    let h = conv(g, "vae.dec.conv_in", z, 1)?;
    let h = norm(g, "vae.dec.norm0", h, cfg.groups)?;
    let h = g.silu(h);
    let h = g.upsample2x(h)?;
    let h = conv(g, "vae.dec.up1", h, 1)?;
    let h = norm(g, "vae.dec.norm1", h, cfg.groups)?;
    let h = g.silu(h);
    let h = g.upsample2x(h)?;
    let h = conv(g, "vae.dec.up2", h, 1)?;
    let h = g.silu(h);
    let h = conv(g, "vae.dec.out", h, 1)?;
    Ok(g.sigmoid(h))
}

fn check_frame(params: &ModelParams, frame: &Tensor<f32>) -> Result<()> {
    expect_shape(frame, &params.cfg.frame_shape(), "frame")?;
    if frame.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        bail!(Contract, "frame values must lie in [0, 1]");
    }
    Ok(())
}

/// `(μ, log σ²)` for one frame.
pub fn vae_moments(params: &ModelParams, frame: &Tensor<f32>) -> Result<(Tensor<f32>, Tensor<f32>)> {
    check_frame(params, frame)?;
    let mut g = Graph::inference(&params.store);
    let x = g.input(frame.clone());
    let (mu, lv) = encode_graph(&mut g, &params.cfg, x)?;
    g.check_finite()?;
    Ok((g.value(mu).clone(), g.value(lv).clone()))
}

/// Deterministic encoding: the posterior mean.
pub fn vae_encode(params: &ModelParams, frame: &Tensor<f32>) -> Result<LatentMap> {
    Ok(LatentMap::clean(vae_moments(params, frame)?.0))
}

/// Sampling encoding `μ + temperature·σ·ε`.
pub fn vae_encode_sampled(
    params: &ModelParams,
    frame: &Tensor<f32>,
    rng: &mut Rng,
    temperature: f32,
) -> Result<LatentMap> {
    let (mu, lv) = vae_moments(params, frame)?;
    let eps = Tensor::<f32>::randn(mu.shape(), rng);
    let z = Tensor::from_fn(mu.shape(), |i| {
        mu.data()[i] + temperature * (0.5 * lv.data()[i]).exp() * eps.data()[i]
    });
    if !z.is_finite() {
        bail!(Numeric, "non-finite latent sample");
    }
    Ok(LatentMap::clean(z))
}

pub fn vae_decode(params: &ModelParams, z: &LatentMap) -> Result<Tensor<f32>> {
    if let Provenance::Noisy { t } = z.provenance {
        bail!(Contract, "cannot decode a latent still noised to step {t}");
    }
    expect_shape(&z.values, &params.cfg.latent_shape(), "latent")?;
    let mut g = Graph::inference(&params.store);
    let zv = g.input(z.values.clone());
    let out = decode_graph(&mut g, &params.cfg, zv)?;
    g.check_finite()?;
    Ok(g.value(out).clone())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub kl_weight: f64,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self { steps: 600, batch: 8, lr: 2e-3, kl_weight: 1e-3, seed: 0 }
    }
}

/// Per-frame objective `mean((x̂ - x)²) + w·KL(q(z|x) ‖ N(0, I))`, the KL
/// averaged over latent elements.
fn frame_loss<T: Real>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    frame: &Tensor<f32>,
    eps: &Tensor<f32>,
    kl_weight: f64,
) -> Result<Var> {
    let x = g.input(frame.cast());
    let (mu, lv) = encode_graph(g, cfg, x)?;
    let half_lv = g.scale(lv, T::of(0.5));
    let sigma = g.exp(half_lv);
    let e = g.input(eps.cast());
    let noise = g.mul(sigma, e)?;
    let z = g.add(mu, noise)?;
    let recon = decode_graph(g, cfg, z)?;
    let diff = g.sub(recon, x)?;
    let sq = g.square(diff);
    let mse = g.mean(sq);
    // KL per element: ½(μ² + σ² − log σ² − 1).
    let mu2 = g.square(mu);
    let var = g.exp(lv);
    let kl = g.add(mu2, var)?;
    let kl = g.sub(kl, lv)?;
    let kl = g.mean(kl);
    let kl = g.scale(kl, T::of(0.5 * kl_weight));
    let shift = g.input(Tensor::scalar(T::of(-0.5 * kl_weight)));
    let kl = g.add(kl, shift)?;
    g.add(mse, kl)
}

/// Train the VAE alone on `frames`, then freeze it and set the latent scale
/// to the reciprocal standard deviation of the posterior means. Returns
/// the per-step loss.
pub fn pretrain_vae(params: &mut ModelParams, frames: &[Tensor<f32>], cfg: &VaeTrainConfig) -> Result<Vec<f64>> {
    if frames.is_empty() || cfg.batch == 0 {
        bail!(Config, "VAE pretraining needs frames and a positive batch size");
    }
    for f in frames {
        check_frame(params, f)?;
    }
    let saved: Vec<bool> = params.store.iter().map(|(_, p)| p.trainable).collect();
    for (id, trainable) in saved.iter().enumerate() {
        let p = params.store.get_mut(crate::numerics::ParamId(id));
        p.trainable = *trainable && p.name.starts_with("vae.");
    }
    let mut rng = Rng::new(cfg.seed);
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let latent = params.cfg.latent_shape();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        params.store.zero_grad();
        let grads = {
            let mut g = Graph::with_params(&params.store);
            let mut terms = Vec::with_capacity(cfg.batch);
            for _ in 0..cfg.batch {
                let frame = &frames[rng.below(frames.len())];
                let eps = Tensor::randn(&latent, &mut rng);
                terms.push(frame_loss(&mut g, &params.cfg, frame, &eps, cfg.kl_weight)?);
            }
            let stacked = g.concat0(&terms)?;
            let loss = g.mean(stacked);
            g.check_finite().map_err(|e| crate::Error::Numeric(format!("VAE step {step}: {e}")))?;
            losses.push(g.value(loss).item()? as f64);
            g.backward(loss)?
        };
        params.store.accumulate(&grads)?;
        adam.step(&mut params.store)?;
    }
    for (id, trainable) in saved.iter().enumerate() {
        let p = params.store.get_mut(crate::numerics::ParamId(id));
        p.trainable = *trainable && !p.name.starts_with("vae.");
    }
    params.store.clear_grads();
    params.latent_scale = latent_scale(params, frames)?;
    Ok(losses)
}

fn latent_scale(params: &ModelParams, frames: &[Tensor<f32>]) -> Result<f64> {
    let (mut n, mut s, mut s2) = (0usize, 0f64, 0f64);
    for f in frames.iter().take(512) {
        for &v in vae_moments(params, f)?.0.data() {
            n += 1;
            s += v as f64;
            s2 += (v as f64) * (v as f64);
        }
    }
    let mean = s / n as f64;
    let std = (s2 / n as f64 - mean * mean).max(0.0).sqrt();
    if !(std > 1e-8) {
        bail!(Numeric, "VAE latents collapsed (std {std})");
    }
    Ok(1.0 / std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_clip, SynthConfig};
    use crate::models::ModelConfig;

    fn params(seed: u64) -> ModelParams {
        ModelParams::new(ModelConfig::default(), seed).unwrap()
    }

    fn frame(seed: u64) -> Tensor<f32> {
        generate_clip(&SynthConfig { seed, frames: 1, ..Default::default() }).unwrap().frame(0).clone()
    }

    #[test]
    fn shapes_and_bounds() {
        let p = params(1);
        let z = vae_encode(&p, &frame(1)).unwrap();
        assert_eq!(z.values.shape(), &[4, 8, 8]);
        let mut rng = Rng::new(2);
        for _ in 0..3 {
            let z = LatentMap::clean(Tensor::uniform(&[4, 8, 8], -3.0, 3.0, &mut rng));
            let x = vae_decode(&p, &z).unwrap();
            assert_eq!(x.shape(), &[3, 32, 32]);
            assert!(x.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn deterministic_modes() {
        let p = params(3);
        let f = frame(4);
        let a = vae_encode(&p, &f).unwrap();
        assert_eq!(a, vae_encode(&p, &f).unwrap());
        let cold = vae_encode_sampled(&p, &f, &mut Rng::new(99), 0.0).unwrap();
        assert_eq!(cold, a);
        let warm = vae_encode_sampled(&p, &f, &mut Rng::new(99), 1.0).unwrap();
        assert_ne!(warm, a);
        assert_eq!(vae_decode(&p, &a).unwrap(), vae_decode(&p, &a).unwrap());
    }

    #[test]
    fn noisy_latent_cannot_be_decoded() {
        let p = params(5);
        let z = LatentMap::noisy(Tensor::zeros(&[4, 8, 8]), 3);
        assert!(matches!(vae_decode(&p, &z), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn out_of_range_frame_rejected() {
        let p = params(5);
        assert!(matches!(vae_encode(&p, &frame(1).scale(2.0)), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn pretraining_beats_mean_image_and_freezes() {
        let mut frames = Vec::new();
        for seed in 0..12 {
            let v = generate_clip(&SynthConfig { seed, frames: 4, ..Default::default() }).unwrap();
            frames.extend(v.truth().unwrap().iter().cloned());
        }
        let mut p = params(7);
        let cfg = VaeTrainConfig { steps: 150, batch: 4, ..Default::default() };
        pretrain_vae(&mut p, &frames, &cfg).unwrap();
        let n = frames.len() as f32;
        let mean = frames.iter().skip(1).fold(frames[0].clone(), |acc, f| acc.add(f).unwrap()).scale(1.0 / n);
        let (mut base, mut recon) = (0.0f64, 0.0f64);
        for f in &frames {
            base += f.sub(&mean).unwrap().sum_sq() as f64;
            let r = vae_decode(&p, &vae_encode(&p, f).unwrap()).unwrap();
            recon += r.sub(f).unwrap().sum_sq() as f64;
        }
        assert!(recon < base, "reconstruction {recon} vs mean-image baseline {base}");
        assert!(p.store.iter().all(|(_, q)| q.trainable != q.name.starts_with("vae.")));
        assert!(p.latent_scale.is_finite() && p.latent_scale > 0.0);
    }
}
