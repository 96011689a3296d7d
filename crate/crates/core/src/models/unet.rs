//! Noise-prediction U-Net on `[c_z×p_z×p_z]` latents.
//!
//! Input channels are the noisy latent, the encoded masked frame and the
//! pooled mask. Two resolution levels (`p_z` and `p_z/2`) plus a
//! bottleneck; every residual block receives the sinusoidal timestep
//! embedding and is followed by a fused cross-attention block. The output
//! convolution starts at zero.

use super::attention::{block as attention_block, GuideVars, TokenVars};
use super::layers::{conv, linear, norm, resblock, Init};
use super::{expect_shape, Guides, LatentMap, MaskedLatentCond, ModelConfig, ModelParams};
use crate::error::{bail, Result};
use crate::numerics::{Graph, Real, Tensor, Var};

pub(crate) fn init(b: &mut Init<'_>, cfg: &ModelConfig) -> Result<()> {
    let [c0, c1] = cfg.unet_ch;
    let (d, te) = (cfg.width(), cfg.temb_dim);
    b.linear("unet.temb1", te, te, true, 1.0)?;
    b.linear("unet.temb2", te, te, true, 1.0)?;
    b.conv("unet.conv_in", c0, 2 * cfg.c_z + 1, 3, 1.0)?;
    b.resblock("unet.down0.res", c0, c0, te)?;
    b.attention("unet.down0.attn", c0, d)?;
    b.conv("unet.down", c1, c0, 3, 1.0)?;
    b.resblock("unet.down1.res", c1, c1, te)?;
    b.attention("unet.down1.attn", c1, d)?;
    b.resblock("unet.mid.res", c1, c1, te)?;
    b.attention("unet.mid.attn", c1, d)?;
    b.resblock("unet.up1.res", 2 * c1, c1, te)?;
    b.attention("unet.up1.attn", c1, d)?;
    b.resblock("unet.up0.res", c1 + c0, c0, te)?;
    b.attention("unet.up0.attn", c0, d)?;
    b.norm("unet.norm_out", c0)?;
    b.zero_conv("unet.conv_out", cfg.c_z, c0, 3)
}

/// Sinusoidal features `[sin(t·f_i), cos(t·f_i)]`, `f_i = 10000^{-i/half}`.
pub fn timestep_features(t: usize, dim: usize) -> Tensor<f64> {
    let half = dim / 2;
    Tensor::from_fn(&[1, dim], |j| {
        let i = j % half;
        let f = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let a = t as f64 * f;
        if j < half {
            a.sin()
        } else {
            a.cos()
        }
    })
}

/// Inputs to one U-Net evaluation inside a graph.
#[derive(Clone, Copy, Debug)]
pub struct UnetInputs {
    pub y: Var,
    pub t: usize,
    pub context: Var,
    pub mask: Var,
    pub guides: Option<GuideVars>,
}

pub fn forward<T: Real>(g: &mut Graph<'_, T>, cfg: &ModelConfig, alpha: [f64; 2], inp: UnetInputs) -> Result<Var> {
    if inp.t == 0 {
        bail!(Contract, "timestep must be at least 1");
    }
    let occluded = g.value(inp.mask).data().iter().any(|&v| v != T::zero());
    if occluded && inp.guides.is_none() {
        bail!(Contract, "occluded frame has no guidance");
    }
    let groups = cfg.groups;
    let te = g.input(timestep_features(inp.t, cfg.temb_dim).cast());
    let te = linear(g, "unet.temb1", te, true)?;
    let te = g.silu(te);
    let temb = linear(g, "unet.temb2", te, true)?;

    let attn = |g: &mut Graph<'_, T>, name: &str, h: Var| match inp.guides {
        Some(gv) => attention_block(g, name, h, gv, alpha, groups),
        None => Ok(h),
    };

    let x = g.concat0(&[inp.y, inp.context, inp.mask])?;
    let h = conv(g, "unet.conv_in", x, 1)?;
    let h = resblock(g, "unet.down0.res", h, temb, groups)?;
    let h0 = attn(g, "unet.down0.attn", h)?;
    let h = conv(g, "unet.down", h0, 2)?;
    let h = resblock(g, "unet.down1.res", h, temb, groups)?;
    let h1 = attn(g, "unet.down1.attn", h)?;
    let h = resblock(g, "unet.mid.res", h1, temb, groups)?;
    let h = attn(g, "unet.mid.attn", h)?;
    let h = g.concat0(&[h, h1])?;
    let h = resblock(g, "unet.up1.res", h, temb, groups)?;
    let h = attn(g, "unet.up1.attn", h)?;
    let h = g.upsample2x(h)?;
    let h = g.concat0(&[h, h0])?;
    let h = resblock(g, "unet.up0.res", h, temb, groups)?;
    let h = attn(g, "unet.up0.attn", h)?;
    let h = norm(g, "unet.norm_out", h, groups)?;
    let h = g.silu(h);
    conv(g, "unet.conv_out", h, 1)
}

pub(crate) fn guide_vars<T: Real>(g: &mut Graph<'_, T>, guides: Option<Guides<'_>>) -> Option<GuideVars> {
    guides.map(|gd| match gd {
        Guides::Single(t) => GuideVars::Single(TokenVars::input(g, t)),
        Guides::Dual(a, b) => GuideVars::Dual(TokenVars::input(g, a), TokenVars::input(g, b)),
    })
}

/// Predicted noise `ε̂` for a noisy latent; the timestep comes from the
/// latent's provenance.
pub fn unet_predict_noise(
    params: &ModelParams,
    y: &LatentMap,
    cond: &MaskedLatentCond,
    guides: Option<Guides<'_>>,
) -> Result<Tensor<f32>> {
    let Some(t) = y.timestep() else { bail!(Contract, "denoiser input must be a noisy latent") };
    let cfg = &params.cfg;
    let lshape = cfg.latent_shape();
    expect_shape(&y.values, &lshape, "noisy latent")?;
    expect_shape(&cond.context, &lshape, "context latent")?;
    expect_shape(&cond.mask, &[1, lshape[1], lshape[2]], "latent mask")?;
    let mut g = Graph::inference(&params.store);
    let inp = UnetInputs {
        y: g.input(y.values.clone()),
        t,
        context: g.input(cond.context.clone()),
        mask: g.input(cond.mask.clone()),
        guides: guide_vars(&mut g, guides),
    };
    let out = forward(&mut g, cfg, params.alpha(), inp)?;
    g.check_finite()?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GuidanceTokens, GuideSource};
    use crate::numerics::gradcheck::{check_params, random_param_probes, ParamFn};
    use crate::numerics::{ParamStore, Rng};

    fn perturbed(seed: u64) -> ModelParams {
        let mut p = ModelParams::new(ModelConfig::default(), seed).unwrap();
        let mut rng = Rng::new(seed + 100);
        for name in ["unet.conv_out.w", "unet.conv_out.b"] {
            let id = p.store.id(name).unwrap();
            let shape = p.store.value(id).shape().to_vec();
            p.store.get_mut(id).value = Tensor::randn(&shape, &mut rng).scale(0.1);
        }
        p
    }

    fn tokens(rng: &mut Rng, source: GuideSource) -> GuidanceTokens {
        GuidanceTokens { keys: Tensor::randn(&[8, 32], rng), values: Tensor::randn(&[8, 32], rng), source }
    }

    fn cond(rng: &mut Rng) -> MaskedLatentCond {
        let mask = Tensor::from_fn(&[1, 8, 8], |i| if i % 8 < 3 { 1.0 } else { 0.0 });
        MaskedLatentCond { context: Tensor::uniform(&[4, 8, 8], -3.0, 3.0, rng), mask }
    }

    #[test]
    fn output_shape_and_determinism() {
        let p = perturbed(1);
        let mut rng = Rng::new(2);
        let c = cond(&mut rng);
        let (t1, t2) = (tokens(&mut rng, GuideSource::Symmetric), tokens(&mut rng, GuideSource::Past));
        for t in [1, 7, 50] {
            let y = LatentMap::noisy(Tensor::uniform(&[4, 8, 8], -3.0, 3.0, &mut rng), t);
            let a = unet_predict_noise(&p, &y, &c, Some(Guides::Dual(&t1, &t2))).unwrap();
            assert_eq!(a.shape(), &[4, 8, 8]);
            assert!(a.is_finite());
            assert_eq!(a, unet_predict_noise(&p, &y, &c, Some(Guides::Dual(&t1, &t2))).unwrap());
        }
    }

    #[test]
    fn unit_alpha_equals_single_guide_network() {
        let mut p = perturbed(3);
        p.set_alpha(1.0, 0.0).unwrap();
        let mut rng = Rng::new(4);
        let c = cond(&mut rng);
        let (t1, t2) = (tokens(&mut rng, GuideSource::Symmetric), tokens(&mut rng, GuideSource::Past));
        let y = LatentMap::noisy(Tensor::randn(&[4, 8, 8], &mut rng), 10);
        let dual = unet_predict_noise(&p, &y, &c, Some(Guides::Dual(&t1, &t2))).unwrap();
        let single = unet_predict_noise(&p, &y, &c, Some(Guides::Single(&t1))).unwrap();
        assert_eq!(dual, single);
    }

    #[test]
    fn occluded_frame_without_guides_is_contract_error() {
        let p = perturbed(5);
        let mut rng = Rng::new(6);
        let y = LatentMap::noisy(Tensor::randn(&[4, 8, 8], &mut rng), 3);
        let c = cond(&mut rng);
        assert!(matches!(unet_predict_noise(&p, &y, &c, None), Err(crate::Error::Contract(_))));
        let clear = MaskedLatentCond { mask: Tensor::zeros(&[1, 8, 8]), ..c };
        assert!(unet_predict_noise(&p, &y, &clear, None).is_ok());
        let clean = LatentMap::clean(y.values.clone());
        assert!(matches!(unet_predict_noise(&p, &clean, &clear, None), Err(crate::Error::Contract(_))));
    }

    struct NoiseLoss {
        cfg: ModelConfig,
        y: Tensor<f32>,
        eps: Tensor<f32>,
        cond: MaskedLatentCond,
        t1: GuidanceTokens,
        t2: GuidanceTokens,
    }

    impl ParamFn for NoiseLoss {
        fn eval<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<Var> {
            let tv1 = TokenVars::input(g, &self.t1);
            let tv2 = TokenVars::input(g, &self.t2);
            let inp = UnetInputs {
                y: g.input(self.y.cast()),
                t: 9,
                context: g.input(self.cond.context.cast()),
                mask: g.input(self.cond.mask.cast()),
                guides: Some(GuideVars::Dual(tv1, tv2)),
            };
            let eps_hat = forward(g, &self.cfg, [0.3, 0.7], inp)?;
            let eps = g.input(self.eps.cast());
            let d = g.sub(eps, eps_hat)?;
            let sq = g.square(d);
            Ok(g.sum(sq))
        }
    }

    #[test]
    fn noise_loss_gradient_matches_finite_differences() {
        let p = perturbed(7);
        let mut rng = Rng::new(8);
        let f = NoiseLoss {
            cfg: p.cfg,
            y: Tensor::randn(&[4, 8, 8], &mut rng),
            eps: Tensor::randn(&[4, 8, 8], &mut rng),
            cond: cond(&mut rng),
            t1: tokens(&mut rng, GuideSource::Symmetric),
            t2: tokens(&mut rng, GuideSource::Past),
        };
        let mut store: ParamStore<f32> = p.store.clone();
        store.set_trainable("vae.", false);
        store.set_trainable("enc_", false);
        store.set_trainable("proj_", false);
        let probes = random_param_probes(&store, 20, &mut rng);
        let report = check_params(&f, &store, &probes).unwrap();
        assert!(report.max_rel_err < 1e-3, "{report:?}");
    }
}
