//! The two-branch affordance network: semantic-pose perception on the
//! interactive image, alignment transfer onto the non-interactive image.

mod checkpoint;
mod loss;
mod optim;
mod train;

#[cfg(test)]
mod tests;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, CHECKPOINT_VERSION};
pub use loss::{alignment_loss, total_loss, LossBundle, LAMBDA};
pub use optim::AdamW;
pub use train::{batch_indices, pair_gradients, predict, train_step, Prediction, StepReport, TrainConfig};

use serde::{Deserialize, Serialize};

use crate::blocks::{
    map_to_tokens, tokens_to_map, Conv, CrossTransformerBlock, HeatmapDecoder, MultiScaleFuse, PartEmbeddingTable,
    PoseEncoder, PyramidEncoder, NUM_PARTS, STAGES,
};
use crate::deq::{deq_fuse, DeqOperator, DeqTrace, Solver, TraceSink};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Bound, Init, ParamStore};
use crate::tensor::Tensor;

/// Pixels in `[0, 1]` are standardized with these before the encoder.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of the fused space.
    pub c: usize,
    pub stage_channels: [usize; STAGES],
    pub expansion: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            c: 64,
            stage_channels: [32, 64, 160, 256],
            expansion: 4,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c == 0 || self.expansion == 0 || self.stage_channels.contains(&0) {
            return Err(Error::Config("model widths must be positive".into()));
        }
        Ok(())
    }
}

/// Components switched off for the ablation runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Skip the part-embedding cross-attention (`x_hat = X4`).
    pub text: bool,
    /// Replace every equilibrium layer by the identity on its sources.
    pub pose: bool,
    /// Zero the contact features transferred from the interactive branch.
    pub apparent: bool,
}

impl Ablations {
    pub fn label(&self) -> String {
        let off: Vec<&str> = [("text", self.text), ("pose", self.pose), ("app", self.apparent)]
            .into_iter()
            .filter(|(_, on)| *on)
            .map(|(n, _)| n)
            .collect();
        if off.is_empty() {
            "full".into()
        } else {
            format!("w/o {}", off.join("+"))
        }
    }
}

/// Per-forward settings shared by both branches.
pub struct ForwardCtx<'a> {
    pub solver: Solver,
    pub ablations: Ablations,
    pub sink: Option<&'a TraceSink>,
}

/// Where the per-part contact masks come from.
#[derive(Debug, Clone)]
pub enum MaskSource {
    /// `[7×h1×w1]` binary masks, e.g. from [`teacher_masks`].
    Given(Tensor),
    /// The interactive prediction binarized at 0.5.
    Predicted,
}

#[derive(Debug, Clone)]
pub struct ShpOutputs {
    /// `[h4w4×c]`.
    pub x_hat_in: Var,
    pub z_in: Var,
    /// `[53×c]`.
    pub z_pose: Var,
    /// `[c×h4×w4]`.
    pub x_sp: Var,
    /// `[c×h1×w1]`.
    pub f_hat_in: Var,
    /// `[7×h1×w1]`.
    pub d_in: Var,
    pub trace: Option<DeqTrace>,
}

#[derive(Debug, Clone)]
pub struct GatOutputs {
    pub z_non: Var,
    pub z_pose_bar: Var,
    /// One masked copy of `f_hat_in` per part.
    pub g_in: Vec<Var>,
    /// `[7×c]` masked averages of `g_in`.
    pub g_pooled: Var,
    pub z_hat_non: Var,
    pub f_hat_non: Var,
    pub f_fuse: Var,
    pub d_non: Var,
    pub masks: Tensor,
    pub traces: Vec<DeqTrace>,
}

impl GatOutputs {
    pub fn all_traces<'a>(&'a self, shp: &'a ShpOutputs) -> impl Iterator<Item = &'a DeqTrace> {
        shp.trace.iter().chain(&self.traces)
    }
}

#[derive(Debug, Clone)]
pub struct VcrNet {
    pub config: ModelConfig,
    pub encoder: PyramidEncoder,
    /// Stage-4 features into the fused width.
    pub proj4: Conv,
    pub pose: PoseEncoder,
    pub parts: PartEmbeddingTable,
    pub text: CrossTransformerBlock,
    pub deq_shp: DeqOperator,
    pub tilde_in: Conv,
    pub sp: Conv,
    pub fuse_in: MultiScaleFuse,
    pub dec_in: HeatmapDecoder,
    pub deq_gat: DeqOperator,
    pub tilde_non: Conv,
    pub deq_app: DeqOperator,
    pub fuse_non: MultiScaleFuse,
    pub fuse_out: Conv,
    pub dec_non: HeatmapDecoder,
}

impl VcrNet {
    pub fn new(config: &ModelConfig) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(&mut store, config.seed);
        let (c, e) = (config.c, config.expansion);
        let sc = config.stage_channels;
        let fused_in = [sc[0], sc[1], sc[2], c];
        let net = Self {
            config: config.clone(),
            encoder: PyramidEncoder::new(&mut init, "encoder", sc, e),
            proj4: Conv::new(&mut init, "proj4", sc[3], c, 1, 1),
            pose: PoseEncoder::new(&mut init, "pose", c, e),
            parts: PartEmbeddingTable::new(&mut init, "parts", c),
            text: CrossTransformerBlock::new(&mut init, "shp.text", c, e),
            deq_shp: DeqOperator::new(&mut init, "shp.deq", c, 2)?,
            tilde_in: Conv::new(&mut init, "shp.tilde", c, c, 1, 1),
            sp: Conv::new(&mut init, "shp.sp", 2 * c, c, 1, 1),
            fuse_in: MultiScaleFuse::new(&mut init, "shp.fuse", fused_in, c),
            dec_in: HeatmapDecoder::new(&mut init, "shp.decoder", c),
            deq_gat: DeqOperator::new(&mut init, "gat.deq", c, 2)?,
            tilde_non: Conv::new(&mut init, "gat.tilde", c, c, 1, 1),
            deq_app: DeqOperator::new(&mut init, "gat.deq_app", c, 3)?,
            fuse_non: MultiScaleFuse::new(&mut init, "gat.fuse", fused_in, c),
            fuse_out: Conv::new(&mut init, "gat.fuse_out", (NUM_PARTS + 1) * c, c, 1, 1),
            dec_non: HeatmapDecoder::new(&mut init, "gat.decoder", c),
        };
        Ok((net, store))
    }

    /// Pyramid stages with stage 4 projected to the fused width.
    pub fn encode(&self, g: &mut Graph, p: &Bound, img: Var) -> Result<[Var; STAGES]> {
        let img = g.affine(img, 1.0 / PIXEL_STD, -PIXEL_MEAN / PIXEL_STD);
        let s = self.encoder.forward(g, p, img)?;
        let x4 = self.proj4.forward(g, p, s[3])?;
        Ok([s[0], s[1], s[2], x4])
    }

    fn equilibrium(
        &self,
        g: &mut Graph,
        p: &Bound,
        op: &DeqOperator,
        sources: &[Var],
        ctx: &ForwardCtx<'_>,
    ) -> Result<(Vec<Var>, Option<DeqTrace>)> {
        if ctx.ablations.pose {
            return Ok((sources.to_vec(), None));
        }
        let normed = sources.iter().map(|&s| token_norm(g, s)).collect::<Result<Vec<_>>>()?;
        let w = op.weights(p);
        let (z, trace) = deq_fuse(g, &w, op, &normed, &ctx.solver, ctx.sink)?;
        Ok((z, Some(trace)))
    }

    pub fn deq_operators(&self) -> [&DeqOperator; 3] {
        [&self.deq_shp, &self.deq_gat, &self.deq_app]
    }

    /// Keep every equilibrium map on its initial spectral bound.
    pub fn project_deq(&self, store: &mut ParamStore) -> usize {
        self.deq_operators().iter().map(|op| op.project(store)).sum()
    }

    pub fn shp_forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        stages: &[Var; STAGES],
        x_pose: Var,
        ctx: &ForwardCtx<'_>,
    ) -> Result<ShpOutputs> {
        let x4 = stages[3];
        let (h4, w4) = map_size(g, x4);
        let x4t = map_to_tokens(g, x4)?;
        let x_hat_in = if ctx.ablations.text {
            x4t
        } else {
            let kv = g.concat(&[x4t, self.parts.all(p)], 0)?;
            self.text.forward(g, p, x4t, kv)?
        };
        let (z, trace) = self.equilibrium(g, p, &self.deq_shp, &[x4t, x_pose], ctx)?;
        let z_map = tokens_to_map(g, z[0], h4, w4)?;
        let skip = g.add(z_map, x4)?;
        let x_tilde = self.tilde_in.forward(g, p, skip)?;
        let x_hat_map = tokens_to_map(g, x_hat_in, h4, w4)?;
        let cat = g.concat(&[x_tilde, x_hat_map], 0)?;
        let x_sp = self.sp.forward(g, p, cat)?;
        let f_hat_in = self.fuse_in.forward(g, p, [stages[0], stages[1], stages[2], x_sp])?;
        let d_in = self.dec_in.forward(g, p, f_hat_in)?;
        Ok(ShpOutputs {
            x_hat_in,
            z_in: z[0],
            z_pose: z[1],
            x_sp,
            f_hat_in,
            d_in,
            trace,
        })
    }

    pub fn gat_forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        stages: &[Var; STAGES],
        x_pose: Var,
        shp: &ShpOutputs,
        masks: MaskSource,
        ctx: &ForwardCtx<'_>,
    ) -> Result<GatOutputs> {
        let x4 = stages[3];
        let (h4, w4) = map_size(g, x4);
        let (h1, w1) = map_size(g, shp.f_hat_in);
        let x4t = map_to_tokens(g, x4)?;
        let (z, trace_gat) = self.equilibrium(g, p, &self.deq_gat, &[x4t, x_pose], ctx)?;
        let (z_non, z_pose_bar) = (z[0], z[1]);
        let z_map = tokens_to_map(g, z_non, h4, w4)?;
        let skip = g.add(z_map, x4)?;
        let x_tilde = self.tilde_non.forward(g, p, skip)?;

        let mut masks = match masks {
            MaskSource::Given(m) => m,
            MaskSource::Predicted => g.value(shp.d_in).map(|v| if v >= 0.5 { 1.0 } else { 0.0 }),
        };
        if ctx.ablations.apparent {
            masks = Tensor::zeros(masks.shape());
        }
        let g_in = extract_contact_features(g, shp.f_hat_in, &masks)?;
        let g_pooled = pool_contact_features(g, &g_in, &masks)?;

        let x_tilde_t = map_to_tokens(g, x_tilde)?;
        let (z3, trace_app) = self.equilibrium(g, p, &self.deq_app, &[x_tilde_t, g_pooled, z_pose_bar], ctx)?;
        let z_hat_non = z3[0];
        let f_hat_non = self.fuse_non.forward(g, p, [stages[0], stages[1], stages[2], x_tilde])?;
        let z_hat_map = tokens_to_map(g, z_hat_non, h4, w4)?;
        let up = g.bilinear_upsample(z_hat_map, h1, w1)?;
        let merged = g.add(f_hat_non, up)?;
        let expanded = expand_pooled(g, g_pooled, h1, w1)?;
        let cat = g.concat(&[merged, expanded], 0)?;
        let f_fuse = self.fuse_out.forward(g, p, cat)?;
        let d_non = self.dec_non.forward(g, p, f_fuse)?;
        Ok(GatOutputs {
            z_non,
            z_pose_bar,
            g_in,
            g_pooled,
            z_hat_non,
            f_hat_non,
            f_fuse,
            d_non,
            masks,
            traces: trace_gat.into_iter().chain(trace_app).collect(),
        })
    }

    /// Both branches on `[3×H×W]` images and a `[53×3]` pose.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        img_in: Var,
        img_non: Var,
        pose: Var,
        masks: MaskSource,
        ctx: &ForwardCtx<'_>,
    ) -> Result<(ShpOutputs, GatOutputs)> {
        let (si, sn) = (g.shape(img_in).to_vec(), g.shape(img_non).to_vec());
        if si != sn {
            return Err(Error::shape("vcrnet images", &si, &sn));
        }
        let x_pose = self.pose.forward(g, p, pose)?;
        let stages_in = self.encode(g, p, img_in)?;
        let shp = self.shp_forward(g, p, &stages_in, x_pose, ctx)?;
        let stages_non = self.encode(g, p, img_non)?;
        let gat = self.gat_forward(g, p, &stages_non, x_pose, &shp, masks, ctx)?;
        Ok((shp, gat))
    }
}

/// Parameter-free layer normalization of `[L×c]` tokens; all-zero rows stay zero.
fn token_norm(g: &mut Graph, x: Var) -> Result<Var> {
    let c = g.shape(x)[1];
    let gain = g.constant(Tensor::ones(&[c]));
    let bias = g.constant(Tensor::zeros(&[c]));
    g.layernorm(x, gain, bias)
}

fn map_size(g: &Graph, m: Var) -> (usize, usize) {
    let s = g.shape(m);
    (s[1], s[2])
}

/// Ground-truth part maps `[7×H×W]` average-pooled to `h×w` and binarized at 0.5.
pub fn teacher_masks(gt: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let s = gt.shape();
    if s.len() != 3 || h == 0 || w == 0 || s[1] % h != 0 || s[2] % w != 0 {
        return Err(Error::shape("teacher_masks", s, &[NUM_PARTS, h, w]));
    }
    let (fy, fx) = (s[1] / h, s[2] / w);
    let area = (fy * fx) as f64;
    let d = gt.data();
    let mut out = Vec::with_capacity(s[0] * h * w);
    for k in 0..s[0] {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in 0..fy {
                    let row = (k * s[1] + y * fy + dy) * s[2] + x * fx;
                    acc += d[row..row + fx].iter().sum::<f64>();
                }
                out.push(if acc / area >= 0.5 { 1.0 } else { 0.0 });
            }
        }
    }
    Tensor::new(vec![s[0], h, w], out)
}

/// Per-part product of each mask (broadcast over channels) with `f[c×h×w]`.
pub fn extract_contact_features(g: &mut Graph, f: Var, masks: &Tensor) -> Result<Vec<Var>> {
    let fs = g.shape(f).to_vec();
    let ms = masks.shape();
    if fs.len() != 3 || ms.len() != 3 || ms[1..] != fs[1..] {
        return Err(Error::shape("extract_contact_features", &fs, ms));
    }
    let plane = fs[1] * fs[2];
    (0..ms[0])
        .map(|k| {
            let m = Tensor::new(vec![1, fs[1], fs[2]], masks.data()[k * plane..(k + 1) * plane].to_vec())?;
            let m = g.constant(m);
            g.mul_broadcast(f, m)
        })
        .collect()
}

/// Average of each masked map over its mask support, as rows of `[parts×c]`.
/// An empty mask gives a zero row.
pub fn pool_contact_features(g: &mut Graph, masked: &[Var], masks: &Tensor) -> Result<Var> {
    let mut cols = Vec::with_capacity(masked.len());
    for (k, &m) in masked.iter().enumerate() {
        let s = g.shape(m).to_vec();
        let plane = s[1] * s[2];
        let support = &masks.data()[k * plane..(k + 1) * plane];
        let count: f64 = support.iter().sum();
        let wgt = if count > 0.0 { support.iter().map(|v| v / count).collect() } else { vec![0.0; plane] };
        let wgt = g.constant(Tensor::new(vec![plane, 1], wgt)?);
        let flat = g.reshape(m, &[s[0], plane])?;
        cols.push(g.matmul(flat, wgt)?);
    }
    let stacked = g.concat(&cols, 1)?;
    g.transpose(stacked)
}

/// Broadcast pooled `[parts×c]` rows over an `h×w` grid as `[parts·c×h×w]`.
pub fn expand_pooled(g: &mut Graph, pooled: Var, h: usize, w: usize) -> Result<Var> {
    let n = g.value(pooled).len();
    let col = g.reshape(pooled, &[n, 1])?;
    let ones = g.constant(Tensor::ones(&[1, h * w]));
    let tiled = g.matmul(col, ones)?;
    g.reshape(tiled, &[n, h, w])
}
