use super::{LayerNorm, Linear};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Bound, Init, ParamId};

/// `softmax(q kᵀ / sqrt(c)) v` for `q[Lq×c]`, `k[Lk×c]`, `v[Lk×c]`.
pub fn scaled_dot_attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Var> {
    let c = g.shape(q)[1];
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, 1.0 / (c as f64).sqrt());
    let weights = g.softmax(scaled, 1)?;
    g.matmul(weights, v)
}

/// Single-head pre-norm cross transformer:
/// `Y = MCA(LN(x1), LN(x2)) + x1`, `O = MLP(LN(Y)) + Y`.
#[derive(Debug, Clone)]
pub struct CrossTransformerBlock {
    pub c: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ln_attn: LayerNorm,
    pub ln_mlp: LayerNorm,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

impl CrossTransformerBlock {
    pub fn new(init: &mut Init<'_>, name: &str, c: usize, expansion: usize) -> Self {
        init.scope(name, |init| Self {
            c,
            wq: init.fan_in("wq", &[c, c], c),
            wk: init.fan_in("wk", &[c, c], c),
            wv: init.fan_in("wv", &[c, c], c),
            wo: init.fan_in("wo", &[c, c], c),
            ln_attn: LayerNorm::new(init, "ln_attn", c),
            ln_mlp: LayerNorm::new(init, "ln_mlp", c),
            mlp_in: Linear::new(init, "mlp_in", c, expansion * c, true),
            mlp_out: Linear::new(init, "mlp_out", expansion * c, c, true),
        })
    }

    /// Queries from `x1[L1×c]`, keys and values from `x2[L2×c]`; returns `[L1×c]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x1: Var, x2: Var) -> Result<Var> {
        let (s1, s2) = (g.shape(x1).to_vec(), g.shape(x2).to_vec());
        if s1.len() != 2 || s2.len() != 2 || s1[1] != self.c || s2[1] != self.c {
            return Err(Error::shape("cross_transformer", &s1, &s2));
        }
        let nq = self.ln_attn.forward(g, p, x1)?;
        let nkv = if x1 == x2 { nq } else { self.ln_attn.forward(g, p, x2)? };
        let q = g.matmul(nq, p[self.wq])?;
        let k = g.matmul(nkv, p[self.wk])?;
        let v = g.matmul(nkv, p[self.wv])?;
        let att = scaled_dot_attention(g, q, k, v)?;
        let proj = g.matmul(att, p[self.wo])?;
        let y = g.add(x1, proj)?;

        let ny = self.ln_mlp.forward(g, p, y)?;
        let h = self.mlp_in.forward(g, p, ny)?;
        let h = g.gelu(h);
        let m = self.mlp_out.forward(g, p, h)?;
        g.add(y, m)
    }

    /// Parameters that must be zero for the block to act as the identity.
    pub fn residual_param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.wq, self.wk, self.wv, self.wo, self.mlp_in.w, self.mlp_out.w];
        ids.extend(self.mlp_in.b);
        ids.extend(self.mlp_out.b);
        ids
    }
}
