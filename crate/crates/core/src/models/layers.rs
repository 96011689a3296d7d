//! Named-parameter building blocks shared by the networks.
//!
//! Every layer comes as a pair: an `init_*` function that registers its
//! parameters under a name prefix, and a forward function that looks them
//! up by the same prefix inside a [`Graph`].

use crate::error::Result;
use crate::numerics::{Graph, ParamStore, Real, Rng, Tensor, Var};

pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore<f32>,
    pub rng: &'a mut Rng,
}

impl Init<'_> {
    fn normal(&mut self, name: String, shape: &[usize], std: f64) -> Result<()> {
        let t = Tensor::<f32>::randn(shape, self.rng).scale(std as f32);
        self.store.add(name, t)?;
        Ok(())
    }

    fn zeros(&mut self, name: String, shape: &[usize]) -> Result<()> {
        self.store.add(name, Tensor::zeros(shape))?;
        Ok(())
    }

    fn ones(&mut self, name: String, shape: &[usize]) -> Result<()> {
        self.store.add(name, Tensor::full(shape, 1.0))?;
        Ok(())
    }

    /// `k×k` convolution with He-scaled weights (`gain` multiplies the std)
    /// and zero bias.
    pub fn conv(&mut self, name: &str, c_out: usize, c_in: usize, k: usize, gain: f64) -> Result<()> {
        let std = gain * (2.0 / (c_in * k * k) as f64).sqrt();
        self.normal(format!("{name}.w"), &[c_out, c_in, k, k], std)?;
        self.zeros(format!("{name}.b"), &[c_out])
    }

    pub fn zero_conv(&mut self, name: &str, c_out: usize, c_in: usize, k: usize) -> Result<()> {
        self.zeros(format!("{name}.w"), &[c_out, c_in, k, k])?;
        self.zeros(format!("{name}.b"), &[c_out])
    }

    /// `[d_in×d_out]` weight, optional `[d_out]` bias.
    pub fn linear(&mut self, name: &str, d_in: usize, d_out: usize, bias: bool, gain: f64) -> Result<()> {
        let std = gain * (1.0 / d_in as f64).sqrt();
        self.normal(format!("{name}.w"), &[d_in, d_out], std)?;
        if bias {
            self.zeros(format!("{name}.b"), &[d_out])?;
        }
        Ok(())
    }

    pub fn norm(&mut self, name: &str, c: usize) -> Result<()> {
        self.ones(format!("{name}.gamma"), &[c])?;
        self.zeros(format!("{name}.beta"), &[c])
    }

    pub fn resblock(&mut self, name: &str, c_in: usize, c_out: usize, temb: usize) -> Result<()> {
        self.norm(&format!("{name}.norm1"), c_in)?;
        self.conv(&format!("{name}.conv1"), c_out, c_in, 3, 1.0)?;
        self.linear(&format!("{name}.temb"), temb, c_out, true, 1.0)?;
        self.norm(&format!("{name}.norm2"), c_out)?;
        self.conv(&format!("{name}.conv2"), c_out, c_out, 3, 0.5)?;
        if c_in != c_out {
            self.conv(&format!("{name}.skip"), c_out, c_in, 1, 0.5)?;
        }
        Ok(())
    }

    pub fn attention(&mut self, name: &str, c: usize, width: usize) -> Result<()> {
        self.norm(&format!("{name}.norm"), c)?;
        self.linear(&format!("{name}.q"), c, width, false, 1.0)?;
        self.linear(&format!("{name}.out"), width, c, false, 0.5)
    }
}

/// Convolution with "same" reflect padding for stride 1.
pub(crate) fn conv<T: Real>(g: &mut Graph<'_, T>, name: &str, x: Var, stride: usize) -> Result<Var> {
    let w = g.param_named(&format!("{name}.w"))?;
    let b = g.param_named(&format!("{name}.b"))?;
    let k = g.shape(w)[2];
    let y = g.conv2d(x, w, stride, k / 2)?;
    g.bias_channel(y, b)
}

/// `x[n×d_in] · W (+ b)`.
pub(crate) fn linear<T: Real>(g: &mut Graph<'_, T>, name: &str, x: Var, bias: bool) -> Result<Var> {
    let w = g.param_named(&format!("{name}.w"))?;
    let y = g.matmul(x, w)?;
    if bias {
        let b = g.param_named(&format!("{name}.b"))?;
        g.bias_row(y, b)
    } else {
        Ok(y)
    }
}

pub(crate) fn norm<T: Real>(g: &mut Graph<'_, T>, name: &str, x: Var, groups: usize) -> Result<Var> {
    let gamma = g.param_named(&format!("{name}.gamma"))?;
    let beta = g.param_named(&format!("{name}.beta"))?;
    g.group_norm(x, gamma, beta, groups)
}

/// Pre-activation residual block; `temb` is a `[1×temb]` row added per
/// channel after the first convolution.
pub(crate) fn resblock<T: Real>(g: &mut Graph<'_, T>, name: &str, x: Var, temb: Var, groups: usize) -> Result<Var> {
    let h = norm(g, &format!("{name}.norm1"), x, groups)?;
    let h = g.silu(h);
    let h = conv(g, &format!("{name}.conv1"), h, 1)?;
    let c_out = g.shape(h)[0];
    let t = g.silu(temb);
    let t = linear(g, &format!("{name}.temb"), t, true)?;
    let t = g.reshape(t, &[c_out])?;
    let h = g.bias_channel(h, t)?;
    let h = norm(g, &format!("{name}.norm2"), h, groups)?;
    let h = g.silu(h);
    let h = conv(g, &format!("{name}.conv2"), h, 1)?;
    let skip = if g.shape(x)[0] != c_out { conv(g, &format!("{name}.skip"), x, 1)? } else { x };
    g.add(h, skip)
}
