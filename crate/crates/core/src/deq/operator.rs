use crate::blocks::scaled_dot_attention;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{spectral_norm, Bound, Init, ParamId, ParamStore};
use crate::tensor::Tensor;

use super::solver::{solve, DeqTrace, SolverConfig, SolverKind};

const PER_SOURCE: usize = 6;
const FFN_PARAMS: usize = 4;
pub const FFN_EXPANSION: usize = 4;
/// Spectral norm of every weight matrix at init is `INIT_GAIN / sqrt(c)`.
pub const INIT_GAIN: f64 = 0.9;
/// Relative slack before [`DeqOperator::project`] rescales a matrix.
const PROJECT_SLACK: f64 = 1e-6;

/// Multi-source fixed-point map
///
/// ```text
/// Q = concat_i(X_i W_i^Q + Z_i W_i^Q')      (K and V alike)
/// H = softmax(Q Kᵀ / sqrt(c)) V
/// f(Z; X) = FFN(H) + H
/// ```
///
/// split back into one block per source. The residual wraps the attention
/// output instead of `Z` itself: with a `+ Z` skip the Jacobian is the
/// identity plus a perturbation and plain iteration cannot contract.
#[derive(Debug, Clone, PartialEq)]
pub struct DeqOperator {
    pub c: usize,
    pub sources: usize,
    /// Per source `wq, wk, wv, uq, uk, uv`, then `ffn_in.w, ffn_in.b, ffn_out.w, ffn_out.b`.
    ids: Vec<ParamId>,
}

impl DeqOperator {
    pub fn new(init: &mut Init<'_>, name: &str, c: usize, sources: usize) -> Result<Self> {
        if !(2..=3).contains(&sources) {
            return Err(Error::Config(format!("a DEQ layer fuses 2 or 3 sources, got {sources}")));
        }
        let sigma = INIT_GAIN / (c as f64).sqrt();
        let ids = init.scope(name, |init| {
            let mut ids = Vec::with_capacity(PER_SOURCE * sources + FFN_PARAMS);
            for s in 0..sources {
                init.scope(&format!("src{}", s + 1), |init| {
                    for w in ["wq", "wk", "wv", "uq", "uk", "uv"] {
                        ids.push(init.spectral(w, c, c, sigma));
                    }
                });
            }
            let h = FFN_EXPANSION * c;
            ids.push(init.spectral("ffn_in.w", c, h, sigma));
            ids.push(init.zeros("ffn_in.b", &[h]));
            ids.push(init.spectral("ffn_out.w", h, c, sigma));
            ids.push(init.zeros("ffn_out.b", &[c]));
            ids
        });
        Ok(Self { c, sources, ids })
    }

    pub fn param_ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn max_spectral_norm(&self) -> f64 {
        INIT_GAIN / (self.c as f64).sqrt()
    }

    /// Rescale every weight matrix whose spectral norm exceeds
    /// [`Self::max_spectral_norm`] back onto that bound. Returns how many moved.
    pub fn project(&self, store: &mut ParamStore) -> usize {
        let bound = self.max_spectral_norm();
        let mut moved = 0;
        for &id in &self.ids {
            let t = store.get_mut(id);
            if t.ndim() != 2 {
                continue;
            }
            let s = spectral_norm(t);
            if s > bound * (1.0 + PROJECT_SLACK) {
                for v in t.data_mut() {
                    *v *= bound / s;
                }
                t.round_f32();
                moved += 1;
            }
        }
        moved
    }

    /// This operator's handles out of a bound store, in [`Self::param_ids`] order.
    pub fn weights(&self, p: &Bound) -> Vec<Var> {
        self.ids.iter().map(|&id| p[id]).collect()
    }

    fn check_blocks(&self, g: &Graph, z: &[Var], x: &[Var]) -> Result<()> {
        if x.len() != self.sources || z.len() != self.sources {
            return Err(Error::Config(format!(
                "DEQ operator has {} sources, got {} input and {} state blocks",
                self.sources,
                x.len(),
                z.len()
            )));
        }
        for (&zi, &xi) in z.iter().zip(x) {
            let (sz, sx) = (g.shape(zi), g.shape(xi));
            if sx.len() != 2 || sx[1] != self.c || sz != sx {
                return Err(Error::shape("f_theta block", sz, sx));
            }
        }
        Ok(())
    }

    /// One application of the map; `w` from [`Self::weights`].
    pub fn apply(&self, g: &mut Graph, w: &[Var], z: &[Var], x: &[Var]) -> Result<Vec<Var>> {
        self.check_blocks(g, z, x)?;
        let lens: Vec<usize> = x.iter().map(|&v| g.shape(v)[0]).collect();
        let mut qkv: [Vec<Var>; 3] = Default::default();
        for s in 0..self.sources {
            let base = s * PER_SOURCE;
            for (j, acc) in qkv.iter_mut().enumerate() {
                let from_x = g.matmul(x[s], w[base + j])?;
                let from_z = g.matmul(z[s], w[base + 3 + j])?;
                acc.push(g.add(from_x, from_z)?);
            }
        }
        let q = g.concat(&qkv[0], 0)?;
        let k = g.concat(&qkv[1], 0)?;
        let v = g.concat(&qkv[2], 0)?;
        let h = scaled_dot_attention(g, q, k, v)?;

        let f = PER_SOURCE * self.sources;
        let a = g.matmul(h, w[f])?;
        let a = g.add_broadcast(a, w[f + 1])?;
        let a = g.gelu(a);
        let m = g.matmul(a, w[f + 2])?;
        let m = g.add_broadcast(m, w[f + 3])?;
        let out = g.add(m, h)?;
        g.split(out, 0, &lens)
    }

    /// `steps` undamped applications from `Z = 0`, fully on the tape.
    pub fn unrolled(&self, g: &mut Graph, w: &[Var], x: &[Var], steps: usize) -> Result<Vec<Var>> {
        let mut z: Vec<Var> = x
            .iter()
            .map(|&v| {
                let s = g.shape(v).to_vec();
                g.constant(Tensor::zeros(&s))
            })
            .collect();
        for _ in 0..steps {
            z = self.apply(g, w, &z, x)?;
        }
        Ok(z)
    }

    /// Fixed point for concrete values; `params` in [`Self::param_ids`] order.
    pub fn solve_values(
        &self,
        params: &[Tensor],
        x: &[Tensor],
        cfg: &SolverConfig,
        kind: SolverKind,
    ) -> Result<(Vec<Tensor>, DeqTrace)> {
        let lens: Vec<usize> = x.iter().map(|t| t.shape().first().copied().unwrap_or(0)).collect();
        let total: usize = lens.iter().sum();
        let (flat, trace) = solve(|z| self.map_flat(params, x, z), vec![0.0; total * self.c], cfg, kind)?;
        Ok((split_flat(&flat, &lens, self.c), trace))
    }

    /// `f` on a flat row-major `[ΣL×c]` state, without gradients.
    pub(crate) fn map_flat(&self, params: &[Tensor], x: &[Tensor], z: &[f64]) -> Result<Vec<f64>> {
        let lens: Vec<usize> = x.iter().map(|t| t.shape().first().copied().unwrap_or(0)).collect();
        let mut g = Graph::new();
        let w: Vec<Var> = params.iter().map(|t| g.constant(t.clone())).collect();
        let xv: Vec<Var> = x.iter().map(|t| g.constant(t.clone())).collect();
        let zv: Vec<Var> = split_flat(z, &lens, self.c).into_iter().map(|t| g.constant(t)).collect();
        let out = self.apply(&mut g, &w, &zv, &xv)?;
        Ok(out.iter().flat_map(|&v| g.value(v).data().to_vec()).collect())
    }
}

pub(crate) fn split_flat(flat: &[f64], lens: &[usize], c: usize) -> Vec<Tensor> {
    let mut off = 0;
    lens.iter()
        .map(|&l| {
            let t = Tensor::new(vec![l, c], flat[off..off + l * c].to_vec()).expect("block length");
            off += l * c;
            t
        })
        .collect()
}
