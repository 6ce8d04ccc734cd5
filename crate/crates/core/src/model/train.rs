use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{alignment_loss, total_loss, LossBundle, LAMBDA};
use super::optim::AdamW;
use super::{teacher_masks, Ablations, ForwardCtx, MaskSource, ModelConfig, VcrNet};
use crate::blocks::PyramidEncoder;
use crate::data::SamplePair;
use crate::deq::{DeqTrace, Solver, TraceSink};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::params::ParamStore;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

const FLIP_TAG: u64 = 0xf11b;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub lambda: [f64; 3],
    pub weight_decay: f64,
    /// Random horizontal flips of whole pairs.
    pub flip: bool,
    pub ablations: Ablations,
    pub solver: Solver,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lr: 6e-5,
            steps: 1000,
            batch: 8,
            lambda: LAMBDA,
            weight_decay: 0.01,
            flip: true,
            ablations: Ablations::default(),
            solver: Solver::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be a non-negative number, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if self.lambda.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config(format!("lambda weights must be non-negative, got {:?}", self.lambda)));
        }
        self.solver.config.validate()?;
        self.model.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    /// Batch mean.
    pub loss: LossBundle,
    /// Forward solves followed by adjoint solves, per sample in batch order.
    pub traces: Vec<DeqTrace>,
}

/// Dataset indices used at `step`: consecutive windows over one seeded
/// permutation per epoch, so any step can be recomputed in isolation.
pub fn batch_indices(n: usize, batch: usize, seed: u64, step: usize) -> Vec<(usize, bool)> {
    (0..batch)
        .map(|j| {
            let pos = step * batch + j;
            let epoch = pos / n;
            let mut perm: Vec<usize> = (0..n).collect();
            SplitMix64::fork(seed, epoch as u64).shuffle(&mut perm);
            let flip = SplitMix64::fork(seed ^ FLIP_TAG, pos as u64).bernoulli(0.5);
            (perm[pos % n], flip)
        })
        .collect()
}

/// Loss and parameter gradients for one pair under teacher-forced masks.
pub fn pair_gradients(
    model: &VcrNet,
    store: &ParamStore,
    pair: &SamplePair,
    cfg: &TrainConfig,
) -> Result<(LossBundle, Vec<Tensor>, Vec<DeqTrace>)> {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let sink = TraceSink::default();
    let ctx = ForwardCtx {
        solver: cfg.solver,
        ablations: cfg.ablations,
        sink: Some(&sink),
    };
    let (h, w) = pair.size();
    let (h1, w1) = PyramidEncoder::stage_sizes(h, w)?[0];
    let masks = teacher_masks(&pair.gt_in, h1, w1)?;
    let img_in = g.constant(pair.img_in.clone());
    let img_non = g.constant(pair.img_non.clone());
    let pose = g.constant(pair.pose.clone());
    let (shp, gat) = model.forward(&mut g, &p, img_in, img_non, pose, MaskSource::Given(masks), &ctx)?;
    let l_align = alignment_loss(&mut g, gat.z_pose_bar, shp.z_pose)?;
    let (total, bundle) = total_loss(&mut g, shp.d_in, gat.d_non, &pair.gt_in, &pair.gt_non, l_align, cfg.lambda)?;
    let mut traces: Vec<DeqTrace> = gat.all_traces(&shp).cloned().collect();
    if !bundle.is_finite() {
        return Ok((bundle, Vec::new(), traces));
    }
    g.backward(total)?;
    traces.extend(sink.borrow().iter().cloned());
    let grads = p
        .vars()
        .iter()
        .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(v))))
        .collect();
    Ok((bundle, grads, traces))
}

/// One forward and backward over `batch`, then one optimizer update with the
/// mean gradient and a projection of the equilibrium weights back onto their
/// spectral bound. Samples run in parallel and are reduced in batch order.
pub fn train_step(
    model: &VcrNet,
    store: &mut ParamStore,
    opt: &mut AdamW,
    batch: &[SamplePair],
    cfg: &TrainConfig,
    step: usize,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::Data("empty training batch".into()));
    }
    let results: Vec<Result<_>> = batch.par_iter().map(|pair| pair_gradients(model, store, pair, cfg)).collect();
    let mut bundles = Vec::with_capacity(batch.len());
    let mut traces = Vec::new();
    let mut sum: Vec<Tensor> = store.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut finite = true;
    for r in results {
        let (bundle, grads, tr) = r?;
        bundles.push(bundle);
        traces.extend(tr);
        finite &= bundle.is_finite() && grads.iter().all(Tensor::all_finite);
        for (acc, g) in sum.iter_mut().zip(&grads) {
            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += v;
            }
        }
    }
    let loss = LossBundle::mean(&bundles, cfg.lambda);
    if !finite || !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step, traces });
    }
    let inv = 1.0 / batch.len() as f64;
    for t in &mut sum {
        for v in t.data_mut() {
            *v *= inv;
        }
    }
    opt.step(store, &sum)?;
    model.project_deq(store);
    Ok(StepReport { step, loss, traces })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `[7×H×W]` at input resolution.
    pub d_in: Tensor,
    pub d_non: Tensor,
    /// Forward solves in call order.
    pub traces: Vec<DeqTrace>,
}

/// Inference: masks come from the interactive prediction.
pub fn predict(
    model: &VcrNet,
    store: &ParamStore,
    img_in: &Tensor,
    img_non: &Tensor,
    pose: &Tensor,
    solver: &Solver,
    ablations: Ablations,
) -> Result<Prediction> {
    let mut g = Graph::new();
    let p = store.bind_frozen(&mut g);
    let ctx = ForwardCtx {
        solver: *solver,
        ablations,
        sink: None,
    };
    let s = img_in.shape().to_vec();
    if s.len() != 3 {
        return Err(Error::shape("predict", &s, &[3, 0, 0]));
    }
    let a = g.constant(img_in.clone());
    let b = g.constant(img_non.clone());
    let pose = g.constant(pose.clone());
    let (shp, gat) = model.forward(&mut g, &p, a, b, pose, MaskSource::Predicted, &ctx)?;
    let d_in = g.bilinear_upsample(shp.d_in, s[1], s[2])?;
    let d_non = g.bilinear_upsample(gat.d_non, s[1], s[2])?;
    Ok(Prediction {
        d_in: g.value(d_in).clone(),
        d_non: g.value(d_non).clone(),
        traces: gat.all_traces(&shp).cloned().collect(),
    })
}
