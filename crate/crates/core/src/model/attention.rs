//! Multi-head attention and post-norm transformer decoder layers over flattened feature maps.

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::Linear;

use super::layers::{linear, LayerNorm, Mlp};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    heads: usize,
    dim: usize,
}

impl MultiHeadAttention {
    pub fn new(p: &mut ParamStore, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("embedding dim {dim} not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            wq: linear(p, &format!("{name}.q"), dim, dim)?,
            wk: linear(p, &format!("{name}.k"), dim, dim)?,
            wv: linear(p, &format!("{name}.v"), dim, dim)?,
            wo: linear(p, &format!("{name}.out"), dim, dim)?,
            heads,
            dim,
        })
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let (b, l, _) = x.dims3()?;
        Ok(x
            .reshape((b, l, self.heads, self.dim / self.heads))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    /// `query: (B, Lq, d)`, `key`, `value: (B, Lk, d)`.
    pub fn forward(&self, query: &Tensor, key: &Tensor, value: &Tensor) -> Result<Tensor> {
        let (b, lq, _) = query.dims3()?;
        let q = self.split(&self.wq.forward(query)?)?;
        let k = self.split(&self.wk.forward(key)?)?;
        let v = self.split(&self.wv.forward(value)?)?;
        let scale = 1.0 / ((self.dim / self.heads) as f64).sqrt();
        let scores = (q.matmul(&k.t()?.contiguous()?)? * scale)?;
        let attn = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let out = attn
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, lq, self.dim))?;
        Ok(self.wo.forward(&out)?)
    }

    /// Output when every memory position holds the same vector `value` (`(B, 1, d)`): the
    /// attention weights sum to one, so the result is the value path alone.
    pub fn uniform_memory_output(&self, value: &Tensor) -> Result<Tensor> {
        Ok(self.wo.forward(&self.wv.forward(value)?)?)
    }
}

/// Post-norm decoder layer: optional self-attention, cross-attention, feed-forward.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    self_attn: Option<(MultiHeadAttention, LayerNorm)>,
    cross_attn: MultiHeadAttention,
    norm_cross: LayerNorm,
    ffn: Mlp,
    norm_ffn: LayerNorm,
}

impl DecoderLayer {
    pub fn new(
        p: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        self_attention: bool,
    ) -> Result<Self> {
        let self_attn = if self_attention {
            Some((
                MultiHeadAttention::new(p, &format!("{name}.self_attn"), dim, heads)?,
                LayerNorm::new(p, &format!("{name}.norm_self"), dim)?,
            ))
        } else {
            None
        };
        Ok(DecoderLayer {
            self_attn,
            cross_attn: MultiHeadAttention::new(p, &format!("{name}.cross_attn"), dim, heads)?,
            norm_cross: LayerNorm::new(p, &format!("{name}.norm_cross"), dim)?,
            ffn: Mlp::new(p, &format!("{name}.ffn"), &[dim, ffn_dim, dim])?,
            norm_ffn: LayerNorm::new(p, &format!("{name}.norm_ffn"), dim)?,
        })
    }

    /// `x: (B, L, d)`, `memory: (B, N, d)`, `pos: (N, d)` added to keys only.
    pub fn forward(&self, x: &Tensor, memory: &Tensor, pos: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        if let Some((attn, norm)) = &self.self_attn {
            x = norm.forward(&(&x + attn.forward(&x, &x, &x)?)?)?;
        }
        let keys = memory.broadcast_add(pos)?;
        x = self.forward_tail(&x, &self.cross_attn.forward(&x, &keys, memory)?)?;
        Ok(x)
    }

    /// Residual, normalization and feed-forward after cross-attention produced `cross`.
    pub(crate) fn forward_tail(&self, x: &Tensor, cross: &Tensor) -> Result<Tensor> {
        let x = self.norm_cross.forward(&(x + cross)?)?;
        Ok(self.norm_ffn.forward(&(&x + self.ffn.forward(&x)?)?)?)
    }

    #[cfg(test)]
    pub(crate) fn self_attention(&self) -> Option<&(MultiHeadAttention, LayerNorm)> {
        self.self_attn.as_ref()
    }

    #[cfg(test)]
    pub(crate) fn cross_attention(&self) -> &MultiHeadAttention {
        &self.cross_attn
    }
}

/// Stack of decoder layers reading a `C`-channel feature map projected to `d`.
#[derive(Debug, Clone)]
pub struct Decoder {
    input_proj: Linear,
    layers: Vec<DecoderLayer>,
    pos: Tensor,
}

impl Decoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p: &mut ParamStore,
        name: &str,
        channels: usize,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        layers: usize,
        self_attention: bool,
        map_size: usize,
    ) -> Result<Self> {
        let input_proj = linear(p, &format!("{name}.input_proj"), channels, dim)?;
        let layers = (0..layers)
            .map(|i| DecoderLayer::new(p, &format!("{name}.layers.{i}"), dim, heads, ffn_dim, self_attention))
            .collect::<Result<_>>()?;
        let pos = sine_position_encoding(map_size, map_size, dim, p.device())?.to_dtype(p.dtype())?;
        Ok(Decoder {
            input_proj,
            layers,
            pos,
        })
    }

    /// Flatten `(N, C, H, W)` to projected memory `(N, H*W, d)`.
    pub fn memory(&self, fmap: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = fmap.dims4()?;
        let flat = fmap.reshape((n, c, h * w))?.transpose(1, 2)?.contiguous()?;
        Ok(self.input_proj.forward(&flat)?)
    }

    /// `queries: (N, L, d)` against `fmap: (N, C, H, W)`.
    pub fn forward(&self, queries: &Tensor, fmap: &Tensor) -> Result<Tensor> {
        let memory = self.memory(fmap)?;
        let mut x = queries.clone();
        for l in &self.layers {
            x = l.forward(&x, &memory, &self.pos)?;
        }
        Ok(x)
    }

    #[cfg(test)]
    pub(crate) fn layers(&self) -> &[DecoderLayer] {
        &self.layers
    }
}

/// Fixed 2D sine/cosine encoding, `(H*W, d)`: first half encodes rows, second half columns.
pub fn sine_position_encoding(h: usize, w: usize, dim: usize, device: &Device) -> Result<Tensor> {
    if dim % 4 != 0 {
        return Err(Error::Config(format!("positional encoding needs dim divisible by 4, got {dim}")));
    }
    let half = dim / 2;
    let scale = 2.0 * std::f64::consts::PI;
    let mut data = vec![0.0f64; h * w * dim];
    for r in 0..h {
        for c in 0..w {
            let y = (r as f64 + 1.0) / h as f64 * scale;
            let x = (c as f64 + 1.0) / w as f64 * scale;
            let row = &mut data[(r * w + c) * dim..(r * w + c + 1) * dim];
            for i in 0..half {
                let freq = 10000f64.powf((2 * (i / 2)) as f64 / half as f64);
                let (vy, vx) = (y / freq, x / freq);
                row[i] = if i % 2 == 0 { vy.sin() } else { vy.cos() };
                row[half + i] = if i % 2 == 0 { vx.sin() } else { vx.cos() };
            }
        }
    }
    Ok(Tensor::from_vec(data, (h * w, dim), device)?.to_dtype(DType::F64)?)
}
