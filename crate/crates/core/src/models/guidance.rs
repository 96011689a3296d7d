//! Per-source guidance encoders (three stride-2 convolutions and a linear
//! head to a `p_e` embedding) and the token projectors `R^{p_e} → R^{p'}`.

use super::attention::TokenVars;
use super::layers::{conv, linear, Init};
use super::{expect_shape, GuidanceTokens, GuideSource, ModelConfig, ModelParams};
use crate::error::{bail, Result};
use crate::numerics::{Graph, Real, Tensor, Var};

const ENC_CH: [usize; 3] = [16, 32, 32];

pub(crate) fn init(b: &mut Init<'_>, cfg: &ModelConfig, src: GuideSource) -> Result<()> {
    let e = src.encoder_prefix();
    b.conv(&format!("{e}.conv0"), ENC_CH[0], cfg.channels, 3, 1.0)?;
    b.conv(&format!("{e}.conv1"), ENC_CH[1], ENC_CH[0], 3, 1.0)?;
    b.conv(&format!("{e}.conv2"), ENC_CH[2], ENC_CH[1], 3, 1.0)?;
    let flat = ENC_CH[2] * (cfg.p / 8) * (cfg.p / 8);
    b.linear(&format!("{e}.fc"), flat, cfg.p_e, true, 1.0)?;
    let p = src.projector_prefix();
    // Bias-free first layer: a zero embedding maps to exactly the output bias.
    b.linear(&format!("{p}.fc1"), cfg.p_e, cfg.proj_hidden, false, 2f64.sqrt())?;
    b.linear(&format!("{p}.fc2"), cfg.proj_hidden, cfg.p_prime, true, 1.0)
}

/// Image `[c×p×p]` to a `[1×p_e]` embedding row.
pub fn encoder_graph<T: Real>(g: &mut Graph<'_, T>, src: GuideSource, img: Var) -> Result<Var> {
    let e = src.encoder_prefix();
    let mut h = img;
    for i in 0..3 {
        h = conv(g, &format!("{e}.conv{i}"), h, 2)?;
        h = g.silu(h);
    }
    let n = g.value(h).len();
    let h = g.reshape(h, &[1, n])?;
    linear(g, &format!("{e}.fc"), h, true)
}

/// Embedding row `[1×p_e]` to `k` key and `k` value tokens of width `D`.
pub fn projector_graph<T: Real>(g: &mut Graph<'_, T>, cfg: &ModelConfig, src: GuideSource, z: Var) -> Result<TokenVars> {
    let p = src.projector_prefix();
    let h = linear(g, &format!("{p}.fc1"), z, false)?;
    let h = g.silu(h);
    let h = linear(g, &format!("{p}.fc2"), h, true)?;
    if g.value(h).len() != cfg.p_prime {
        bail!(Config, "projector emits {} values, expected p' = {}", g.value(h).len(), cfg.p_prime);
    }
    let k = cfg.tokens;
    let h = g.reshape(h, &[2 * k, cfg.width()])?;
    Ok(TokenVars { keys: g.narrow0(h, 0, k)?, values: g.narrow0(h, k, k)? })
}

/// Encoder plus projector.
pub fn tokens_graph<T: Real>(g: &mut Graph<'_, T>, cfg: &ModelConfig, src: GuideSource, img: Var) -> Result<TokenVars> {
    let z = encoder_graph(g, src, img)?;
    projector_graph(g, cfg, src, z)
}

/// `p_e`-dimensional embedding of a guidance image from the encoder for `source`.
pub fn encode_guidance(params: &ModelParams, img: &Tensor<f32>, source: GuideSource) -> Result<Tensor<f32>> {
    expect_shape(img, &params.cfg.frame_shape(), "guidance image")?;
    let mut g = Graph::inference(&params.store);
    let x = g.input(img.clone());
    let z = encoder_graph(&mut g, source, x)?;
    g.check_finite()?;
    g.value(z).clone().reshape(&[params.cfg.p_e])
}

pub fn project_tokens(params: &ModelParams, z: &Tensor<f32>, source: GuideSource) -> Result<GuidanceTokens> {
    params.cfg.validate()?;
    if z.len() != params.cfg.p_e {
        bail!(Dimension, "embedding has {} values, expected p_e = {}", z.len(), params.cfg.p_e);
    }
    let mut g = Graph::inference(&params.store);
    let zv = g.input(z.clone().reshape(&[1, params.cfg.p_e])?);
    let t = projector_graph(&mut g, &params.cfg, source, zv)?;
    g.check_finite()?;
    Ok(GuidanceTokens { keys: g.value(t.keys).clone(), values: g.value(t.values).clone(), source })
}
