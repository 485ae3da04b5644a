//! Basic layers built from primitive tensor ops so that every one of them has a backward pass.

use candle_core::{Module, Tensor, D};
use candle_nn::{Conv2d, Conv2dConfig, Linear};

use super::params::{Init, ParamStore};
use crate::error::Result;

/// Fully connected layer, PyTorch-style uniform init.
pub fn linear(p: &mut ParamStore, name: &str, input: usize, output: usize) -> Result<Linear> {
    let bound = 1.0 / (input as f64).sqrt();
    let w = p.var(&format!("{name}.weight"), &[output, input], Init::Uniform(bound))?;
    let b = p.var(&format!("{name}.bias"), &[output], Init::Uniform(bound))?;
    Ok(Linear::new(w, Some(b)))
}

/// Square convolution with He-normal weights and zero bias.
pub fn conv(
    p: &mut ParamStore,
    name: &str,
    input: usize,
    output: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Conv2d> {
    let std = (2.0 / (input * kernel * kernel) as f64).sqrt();
    let w = p.var(
        &format!("{name}.weight"),
        &[output, input, kernel, kernel],
        Init::Normal(std),
    )?;
    let b = p.var(&format!("{name}.bias"), &[output], Init::Zeros)?;
    let cfg = Conv2dConfig {
        padding,
        stride,
        ..Default::default()
    };
    Ok(Conv2d::new(w, Some(b), cfg))
}

/// Layer normalization over the last dimension.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(p: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: p.var(&format!("{name}.weight"), &[dim], Init::Ones)?,
            beta: p.var(&format!("{name}.bias"), &[dim], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// `Linear -> ReLU -> ... -> Linear` with no activation after the last layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(p: &mut ParamStore, name: &str, dims: &[usize]) -> Result<Self> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| linear(p, &format!("{name}.{i}"), w[0], w[1]))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = h.relu()?;
            }
        }
        Ok(h)
    }
}
