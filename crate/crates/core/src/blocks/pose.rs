use super::{CrossTransformerBlock, Linear};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Bound, Init, ParamId};

pub const NUM_JOINTS: usize = 53;
pub const POSE_LAYERS: usize = 2;

/// Lifts `P[53×3]` to `[53×c]` tokens and refines them with self-attention.
#[derive(Debug, Clone)]
pub struct PoseEncoder {
    pub lift: Linear,
    /// Per-joint learned offset so tokens stay distinguishable when coordinates coincide.
    pub joint_embed: ParamId,
    pub layers: Vec<CrossTransformerBlock>,
}

impl PoseEncoder {
    pub fn new(init: &mut Init<'_>, name: &str, c: usize, expansion: usize) -> Self {
        init.scope(name, |init| Self {
            lift: Linear::new(init, "lift", 3, c, true),
            joint_embed: init.fan_in("joint_embed", &[NUM_JOINTS, c], c),
            layers: (0..POSE_LAYERS)
                .map(|i| CrossTransformerBlock::new(init, &format!("layer{}", i + 1), c, expansion))
                .collect(),
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, pose: Var) -> Result<Var> {
        let s = g.shape(pose).to_vec();
        if s != [NUM_JOINTS, 3] {
            return Err(Error::shape("pose_encoder", &s, &[NUM_JOINTS, 3]));
        }
        let lifted = self.lift.forward(g, p, pose)?;
        let mut t = g.add(lifted, p[self.joint_embed])?;
        for layer in &self.layers {
            t = layer.forward(g, p, t, t)?;
        }
        Ok(t)
    }
}

/// Seven learned part vectors standing in for per-part text features.
#[derive(Debug, Clone)]
pub struct PartEmbeddingTable {
    pub table: ParamId,
}

impl PartEmbeddingTable {
    pub const ROWS: usize = 7;

    pub fn new(init: &mut Init<'_>, name: &str, c: usize) -> Self {
        init.scope(name, |init| Self {
            table: init.normal("table", &[Self::ROWS, c], 1.0),
        })
    }

    /// All seven rows, `[7×c]`.
    pub fn all(&self, p: &Bound) -> Var {
        p[self.table]
    }

    pub fn lookup(&self, g: &mut Graph, p: &Bound, part: usize) -> Result<Var> {
        if part >= Self::ROWS {
            return Err(Error::Data(format!("part index {part} out of range 0..7")));
        }
        g.slice(p[self.table], 0, part, 1)
    }
}
