//! Scaled dot-product cross-attention over guidance tokens and its fused
//! two-source form `α₁·A¹ + α₂·A²`.

use super::layers::{linear, norm};
use super::GuidanceTokens;
use crate::error::{bail, Result};
use crate::numerics::{Graph, Real, Tensor, Var};

/// Guidance tokens recorded in a graph.
#[derive(Clone, Copy, Debug)]
pub struct TokenVars {
    pub keys: Var,
    pub values: Var,
}

impl TokenVars {
    pub fn input<T: Real>(g: &mut Graph<'_, T>, tok: &GuidanceTokens) -> Self {
        Self { keys: g.input(tok.keys.cast()), values: g.input(tok.values.cast()) }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum GuideVars {
    Single(TokenVars),
    Dual(TokenVars, TokenVars),
}

/// `softmax(Q Kᵀ / √D) V` for queries `q[n×D]` and tokens `[k×D]`.
pub fn attend<T: Real>(g: &mut Graph<'_, T>, q: Var, tok: TokenVars) -> Result<Var> {
    let (qs, ks, vs) = (g.shape(q).to_vec(), g.shape(tok.keys).to_vec(), g.shape(tok.values).to_vec());
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 || qs[1] != ks[1] || ks != vs {
        bail!(Dimension, "attention widths disagree: queries {qs:?}, keys {ks:?}, values {vs:?}");
    }
    let kt = g.transpose(tok.keys)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, T::of(1.0 / (qs[1] as f64).sqrt()));
    let weights = g.softmax(scores, 1)?;
    g.matmul(weights, tok.values)
}

/// Fused attention `α₁·A¹ + α₂·A²`. Terms with zero weight are not
/// evaluated, so `α = (1, 0)` reproduces [`attend`] on the first source
/// bit for bit.
pub fn fuse<T: Real>(g: &mut Graph<'_, T>, q: Var, tok1: TokenVars, tok2: TokenVars, alpha: [f64; 2]) -> Result<Var> {
    let mut out: Option<Var> = None;
    for (tok, a) in [(tok1, alpha[0]), (tok2, alpha[1])] {
        if a == 0.0 {
            continue;
        }
        let att = attend(g, q, tok)?;
        let term = if a == 1.0 { att } else { g.scale(att, T::of(a)) };
        out = Some(match out {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    match out {
        Some(v) => Ok(v),
        None => bail!(Config, "fusion weights are both zero"),
    }
}

fn guided<T: Real>(g: &mut Graph<'_, T>, q: Var, guides: GuideVars, alpha: [f64; 2]) -> Result<Var> {
    match guides {
        GuideVars::Single(t) => attend(g, q, t),
        GuideVars::Dual(t1, t2) => fuse(g, q, t1, t2, alpha),
    }
}

/// Residual attention block on a `[c×h×w]` feature map: normalise, project
/// pixels to queries, attend, project back, add.
pub(crate) fn block<T: Real>(
    g: &mut Graph<'_, T>,
    name: &str,
    h: Var,
    guides: GuideVars,
    alpha: [f64; 2],
    groups: usize,
) -> Result<Var> {
    let s = g.shape(h).to_vec();
    let (c, n) = (s[0], s[1] * s[2]);
    let x = norm(g, &format!("{name}.norm"), h, groups)?;
    let x = g.reshape(x, &[c, n])?;
    let x = g.transpose(x)?;
    let q = linear(g, &format!("{name}.q"), x, false)?;
    let a = guided(g, q, guides, alpha)?;
    let o = linear(g, &format!("{name}.out"), a, false)?;
    let o = g.transpose(o)?;
    let o = g.reshape(o, &s)?;
    g.add(h, o)
}

fn run<T: Real>(f: impl FnOnce(&mut Graph<'_, T>) -> Result<Var>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let out = f(&mut g)?;
    g.check_finite()?;
    Ok(g.value(out).clone())
}

/// Fused cross-attention on plain tensors; `q` holds already-projected
/// queries `[n×D]`.
pub fn cross_attention(
    q: &Tensor<f32>,
    tok1: &GuidanceTokens,
    tok2: &GuidanceTokens,
    a1: f64,
    a2: f64,
) -> Result<Tensor<f32>> {
    run(|g| {
        let qv = g.input(q.clone());
        let (t1, t2) = (TokenVars::input(g, tok1), TokenVars::input(g, tok2));
        fuse(g, qv, t1, t2, [a1, a2])
    })
}

/// Single-source attention on plain tensors.
pub fn single_attention(q: &Tensor<f32>, tok: &GuidanceTokens) -> Result<Tensor<f32>> {
    run(|g| {
        let qv = g.input(q.clone());
        let t = TokenVars::input(g, tok);
        attend(g, qv, t)
    })
}
