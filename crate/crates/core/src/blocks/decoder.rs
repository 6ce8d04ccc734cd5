use super::Conv;
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{Bound, Init};

pub const NUM_PARTS: usize = 7;

/// conv3×3 → relu → conv1×1 to seven channels → sigmoid.
#[derive(Debug, Clone)]
pub struct HeatmapDecoder {
    pub hidden: Conv,
    pub head: Conv,
}

impl HeatmapDecoder {
    pub fn new(init: &mut Init<'_>, name: &str, c: usize) -> Self {
        init.scope(name, |init| Self {
            hidden: Conv::new(init, "hidden", c, c, 3, 1),
            head: Conv::new(init, "head", c, NUM_PARTS, 1, 1),
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, feat: Var) -> Result<Var> {
        let h = self.hidden.forward(g, p, feat)?;
        let h = g.relu(h);
        let logits = self.head.forward(g, p, h)?;
        Ok(g.sigmoid(logits))
    }
}
