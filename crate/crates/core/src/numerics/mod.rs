//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod params;
pub mod rng;
pub mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use params::{Adam, AdamConfig, Param, ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::{Real, Tensor};

use crate::error::Result;

/// `a · b` on plain tensors.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (va, vb) = (g.input(a.clone()), g.input(b.clone()));
    let out = g.matmul(va, vb)?;
    Ok(g.value(out).clone())
}

/// Reflect-padded cross-correlation on plain tensors.
pub fn conv2d<T: Real>(x: &Tensor<T>, kernel: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (vx, vk) = (g.input(x.clone()), g.input(kernel.clone()));
    let out = g.conv2d(vx, vk, stride, pad)?;
    Ok(g.value(out).clone())
}

pub use graph::{avg_pool2x, softmax};
