use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use vcrnet::data::{Dataset, SamplePair};
use vcrnet::deq::DeqTrace;
use vcrnet::fsutil::{write_atomic, write_json};
use vcrnet::model::{
    batch_indices, load_checkpoint, save_checkpoint, train_step, AdamW, LossBundle, TrainConfig, VcrNet,
};
use vcrnet::params::ParamStore;
use vcrnet::{Error, Result};

use crate::{read_config, write_resolved, Ablation, DataArgs};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LOSS_CSV: &str = "loss.csv";
pub const TRACE_DUMP: &str = "deq_traces.json";

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// JSON training config; unspecified fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Switch off a component; repeatable.
    #[arg(long, value_enum)]
    pub ablate: Vec<Ablation>,
    /// Overrides the config.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint saved with optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also save a checkpoint every this many steps.
    #[arg(long)]
    pub save_every: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct TrainRun<'a> {
    data: &'a Path,
    split: &'a str,
    train_pairs: usize,
    resume: Option<&'a Path>,
    start_step: usize,
    train: &'a TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    /// `(step, loss)` for every step run.
    pub losses: Vec<(usize, LossBundle)>,
}

pub fn resolve_config(a: &TrainArgs, base: Option<TrainConfig>) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => read_config(p)?,
        None => base.unwrap_or_default(),
    };
    for ab in &a.ablate {
        match ab {
            Ablation::Text => cfg.ablations.text = true,
            Ablation::Pose => cfg.ablations.pose = true,
            Ablation::Apparent => cfg.ablations.apparent = true,
        }
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn loss_csv(rows: &[(usize, LossBundle)]) -> String {
    let mut s = String::from("step,l_in,l_non,l_align,l_total\n");
    for (step, l) in rows {
        s.push_str(&format!("{step},{},{},{},{}\n", l.l_in, l.l_non, l.l_align, l.l_total));
    }
    s
}

fn batch(pairs: &[SamplePair], cfg: &TrainConfig, step: usize) -> Vec<SamplePair> {
    batch_indices(pairs.len(), cfg.batch, cfg.seed, step)
        .into_iter()
        .map(|(i, flip)| if flip && cfg.flip { pairs[i].flipped() } else { pairs[i].clone() })
        .collect()
}

pub fn run(a: &TrainArgs) -> Result<TrainOutcome> {
    let resumed = a.resume.as_deref().map(load_checkpoint).transpose()?;
    let cfg = resolve_config(a, resumed.as_ref().and_then(|c| c.manifest.train.clone()))?;
    let ds = Dataset::open(&a.data.data)?;
    let manifest = ds.split(a.data.split)?;
    let pairs = ds.load_many(&manifest.train)?;
    if pairs.is_empty() {
        return Err(Error::Data(format!("split {} has no training pairs", a.data.split.name())));
    }
    let (model, mut store, mut opt, start): (VcrNet, ParamStore, AdamW, usize) = match resumed {
        Some(ck) => {
            if ck.manifest.model != cfg.model {
                return Err(Error::Config(format!(
                    "model config {:?} differs from the checkpoint's {:?}",
                    cfg.model, ck.manifest.model
                )));
            }
            let mut opt = ck
                .optimizer
                .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state to resume from".into()))?;
            opt.lr = cfg.lr;
            opt.weight_decay = cfg.weight_decay;
            (ck.model, ck.store, opt, ck.manifest.step)
        }
        None => {
            let (model, store) = VcrNet::new(&cfg.model)?;
            let opt = AdamW::new(&store, cfg.lr, cfg.weight_decay);
            (model, store, opt, 0)
        }
    };
    write_resolved(
        &a.out,
        "train",
        &TrainRun {
            data: &a.data.data,
            split: a.data.split.name(),
            train_pairs: pairs.len(),
            resume: a.resume.as_deref(),
            start_step: start,
            train: &cfg,
        },
    )?;
    let ck_dir = a.out.join(CHECKPOINT_DIR);
    let mut losses = Vec::new();
    for step in start..cfg.steps {
        let report = match train_step(&model, &mut store, &mut opt, &batch(&pairs, &cfg, step), &cfg, step) {
            Ok(r) => r,
            Err(e) => {
                let traces: Vec<DeqTrace> = match &e {
                    Error::NonFiniteLoss { traces, .. } => traces.clone(),
                    Error::Divergence { trace } => vec![(**trace).clone()],
                    _ => return Err(e),
                };
                write_json(&a.out.join(TRACE_DUMP), &traces)?;
                write_atomic(&a.out.join(LOSS_CSV), loss_csv(&losses).as_bytes())?;
                eprintln!("step {step}: aborting, solver traces in {}", a.out.join(TRACE_DUMP).display());
                return Err(e);
            }
        };
        let l = report.loss;
        if step % 10 == 0 || step + 1 == cfg.steps {
            eprintln!(
                "step {step} l_total {:.5} (in {:.5} non {:.5} align {:.6})",
                l.l_total, l.l_in, l.l_non, l.l_align
            );
        }
        losses.push((step, l));
        if a.save_every.is_some_and(|k| k > 0 && (step + 1) % k == 0) {
            save_checkpoint(&ck_dir, &model, &store, Some(&opt), step + 1, Some(&cfg))?;
        }
    }
    save_checkpoint(&ck_dir, &model, &store, Some(&opt), cfg.steps.max(start), Some(&cfg))?;
    write_atomic(&a.out.join(LOSS_CSV), loss_csv(&losses).as_bytes())?;
    Ok(TrainOutcome {
        checkpoint: ck_dir,
        losses,
    })
}
