use super::{map_to_tokens, tokens_to_map, Conv, CrossTransformerBlock};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Bound, Init};

pub const STAGES: usize = 4;

/// Four-stage pyramid: a strided conv followed by one self-attention block per stage.
/// Stage strides are 4, 2, 2, 2, so stage `i` runs at `1/2^(i+1)` of the input.
#[derive(Debug, Clone)]
pub struct PyramidEncoder {
    pub channels: [usize; STAGES],
    pub convs: Vec<Conv>,
    pub blocks: Vec<CrossTransformerBlock>,
}

impl PyramidEncoder {
    pub fn new(init: &mut Init<'_>, name: &str, channels: [usize; STAGES], expansion: usize) -> Self {
        init.scope(name, |init| {
            let mut convs = Vec::with_capacity(STAGES);
            let mut blocks = Vec::with_capacity(STAGES);
            let mut c_prev = 3;
            for (i, &c) in channels.iter().enumerate() {
                let (k, stride) = if i == 0 { (7, 4) } else { (3, 2) };
                init.scope(&format!("stage{}", i + 1), |init| {
                    convs.push(Conv::new(init, "embed", c_prev, c, k, stride));
                    blocks.push(CrossTransformerBlock::new(init, "attn", c, expansion));
                });
                c_prev = c;
            }
            Self { channels, convs, blocks }
        })
    }

    /// Spatial size of each stage for an `h×w` input.
    pub fn stage_sizes(h: usize, w: usize) -> Result<[(usize, usize); STAGES]> {
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Config(format!(
                "image size {h}x{w} must be a positive multiple of 32"
            )));
        }
        Ok(std::array::from_fn(|i| (h >> (i + 2), w >> (i + 2))))
    }

    /// `img[3×h×w]` to four maps `[c_i × h_i × w_i]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, img: Var) -> Result<Vec<Var>> {
        let s = g.shape(img).to_vec();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::shape("encode_image", &s, &[3, 0, 0]));
        }
        let sizes = Self::stage_sizes(s[1], s[2])?;
        let mut x = img;
        let mut out = Vec::with_capacity(STAGES);
        for ((conv, block), (h, w)) in self.convs.iter().zip(&self.blocks).zip(sizes) {
            let m = conv.forward(g, p, x)?;
            debug_assert_eq!(&g.shape(m)[1..], &[h, w]);
            let t = map_to_tokens(g, m)?;
            let t = block.forward(g, p, t, t)?;
            x = tokens_to_map(g, t, h, w)?;
            out.push(x);
        }
        Ok(out)
    }
}
