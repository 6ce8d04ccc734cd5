use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Default weights of `l_in`, `l_non` and `l_align`.
pub const LAMBDA: [f64; 3] = [1.0, 1.0, 1.0];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_in: f64,
    pub l_non: f64,
    pub l_align: f64,
    pub l_total: f64,
}

impl LossBundle {
    pub fn new(l_in: f64, l_non: f64, l_align: f64, lambda: [f64; 3]) -> Self {
        Self {
            l_in,
            l_non,
            l_align,
            l_total: lambda[0] * l_in + lambda[1] * l_non + lambda[2] * l_align,
        }
    }

    /// Component-wise mean, with the total recombined from the means.
    pub fn mean(items: &[LossBundle], lambda: [f64; 3]) -> Self {
        let n = items.len().max(1) as f64;
        let avg = |f: fn(&LossBundle) -> f64| items.iter().map(f).sum::<f64>() / n;
        Self::new(avg(|b| b.l_in), avg(|b| b.l_non), avg(|b| b.l_align), lambda)
    }

    pub fn is_finite(&self) -> bool {
        [self.l_in, self.l_non, self.l_align, self.l_total].iter().all(|v| v.is_finite())
    }
}

/// `KL(softmax(z_bar) ‖ softmax(z))` per joint over channels, averaged over
/// joints. `z` is the target and receives no gradient.
pub fn alignment_loss(g: &mut Graph, z_bar: Var, z: Var) -> Result<Var> {
    let (sb, sz) = (g.shape(z_bar).to_vec(), g.shape(z).to_vec());
    if sb.len() != 2 || sb != sz {
        return Err(Error::shape("alignment_loss", &sb, &sz));
    }
    let target = g.detach(z);
    let q = g.softmax(z_bar, 1)?;
    let log_q = g.log_softmax(z_bar, 1)?;
    let log_p = g.log_softmax(target, 1)?;
    let diff = g.sub(log_q, log_p)?;
    let terms = g.mul(q, diff)?;
    let s = g.sum(terms);
    Ok(g.scale(s, 1.0 / sb[0] as f64))
}

/// Mean BCE of each branch against its ground truth, predictions upsampled
/// to the ground-truth resolution, and the weighted total.
pub fn total_loss(
    g: &mut Graph,
    d_in: Var,
    d_non: Var,
    gt_in: &Tensor,
    gt_non: &Tensor,
    l_align: Var,
    lambda: [f64; 3],
) -> Result<(Var, LossBundle)> {
    let l_in = branch_bce(g, d_in, gt_in)?;
    let l_non = branch_bce(g, d_non, gt_non)?;
    let terms = [l_in, l_non, l_align].map(|v| g.value(v).item());
    let a = g.scale(l_in, lambda[0]);
    let b = g.scale(l_non, lambda[1]);
    let c = g.scale(l_align, lambda[2]);
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    let bundle = LossBundle::new(terms[0], terms[1], terms[2], lambda);
    Ok((total, bundle))
}

fn branch_bce(g: &mut Graph, pred: Var, gt: &Tensor) -> Result<Var> {
    let (ps, gs) = (g.shape(pred).to_vec(), gt.shape().to_vec());
    if ps.len() != 3 || gs.len() != 3 || ps[0] != gs[0] {
        return Err(Error::shape("total_loss", &ps, &gs));
    }
    let pred = if ps == gs { pred } else { g.bilinear_upsample(pred, gs[1], gs[2])? };
    let target = g.constant(gt.clone());
    g.bce_loss(pred, target)
}
