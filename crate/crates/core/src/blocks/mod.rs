//! Architectural building blocks composed by the affordance model.

mod attention;
mod decoder;
mod encoder;
mod fuse;
mod pose;

pub use attention::{scaled_dot_attention, CrossTransformerBlock};
pub use decoder::{HeatmapDecoder, NUM_PARTS};
pub use encoder::{PyramidEncoder, STAGES};
pub use fuse::MultiScaleFuse;
pub use pose::{PartEmbeddingTable, PoseEncoder, NUM_JOINTS, POSE_LAYERS};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Bound, Init, ParamId};

/// Token-wise affine map `x[L×in] · W[in×out] + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(init: &mut Init<'_>, name: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        init.scope(name, |init| Self {
            w: init.fan_in("w", &[d_in, d_out], d_in),
            b: bias.then(|| init.zeros("b", &[d_out])),
            d_in,
            d_out,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.w])?;
        match self.b {
            Some(b) => g.add_broadcast(y, p[b]),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(init: &mut Init<'_>, name: &str, c: usize) -> Self {
        init.scope(name, |init| Self {
            gain: init.ones("gain", &[c]),
            bias: init.zeros("bias", &[c]),
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.layernorm(x, p[self.gain], p[self.bias])
    }
}

/// Convolution with bias on `[c×h×w]` maps; odd kernel, same padding.
#[derive(Debug, Clone)]
pub struct Conv {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub c_out: usize,
}

impl Conv {
    pub fn new(init: &mut Init<'_>, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        init.scope(name, |init| Self {
            kernel: init.fan_in("kernel", &[c_out, c_in, k, k], c_in * k * k),
            bias: init.zeros("bias", &[c_out]),
            stride,
            c_out,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = if self.stride == 1 {
            g.conv2d(x, p[self.kernel])?
        } else {
            g.conv2d_strided(x, p[self.kernel], self.stride)?
        };
        let b = g.reshape(p[self.bias], &[self.c_out, 1, 1])?;
        g.add_broadcast(y, b)
    }
}

/// `[c×h×w]` map to `[h·w × c]` tokens.
pub fn map_to_tokens(g: &mut Graph, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 3 {
        return Err(Error::shape("map_to_tokens", &s, &[]));
    }
    let flat = g.reshape(x, &[s[0], s[1] * s[2]])?;
    g.transpose(flat)
}

/// `[h·w × c]` tokens back to a `[c×h×w]` map.
pub fn tokens_to_map(g: &mut Graph, t: Var, h: usize, w: usize) -> Result<Var> {
    let s = g.shape(t).to_vec();
    if s.len() != 2 || s[0] != h * w {
        return Err(Error::shape("tokens_to_map", &s, &[h, w]));
    }
    let tr = g.transpose(t)?;
    g.reshape(tr, &[s[1], h, w])
}
