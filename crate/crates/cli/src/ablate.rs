use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use vcrnet::fsutil::write_atomic;
use vcrnet::model::Ablations;
use vcrnet::Result;

use crate::eval::{self, EvalArgs, EvalSummary};
use crate::train::{self, TrainArgs};
use crate::{write_resolved, Ablation, DataArgs, Partition};

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Training config shared by every run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_enum, default_value = "test")]
    pub partition: Partition,
    #[arg(long)]
    pub out: PathBuf,
}

/// The full model followed by one run per switched-off component.
pub const RUNS: [(&str, Option<Ablation>); 4] = [
    ("full", None),
    ("wo_text", Some(Ablation::Text)),
    ("wo_pose", Some(Ablation::Pose)),
    ("wo_app", Some(Ablation::Apparent)),
];

#[derive(Debug, Serialize)]
struct AblateRun<'a> {
    data: &'a Path,
    split: &'a str,
    config: Option<&'a Path>,
    steps: Option<usize>,
    partition: Partition,
    runs: Vec<&'a str>,
}

/// `config,split,kld,sim,nss`, one row per run.
pub fn comparison_csv(rows: &[(String, EvalSummary)]) -> String {
    let mut s = String::from("config,split,kld,sim,nss\n");
    for (label, r) in rows {
        s.push_str(&format!("{label},{},{},{},{}\n", r.split, r.kld, r.sim, r.nss));
    }
    s
}

pub fn run(a: &AblateArgs) -> Result<()> {
    write_resolved(
        &a.out,
        "ablate",
        &AblateRun {
            data: &a.data.data,
            split: a.data.split.name(),
            config: a.config.as_deref(),
            steps: a.steps,
            partition: a.partition,
            runs: RUNS.iter().map(|r| r.0).collect(),
        },
    )?;
    let mut rows = Vec::new();
    for (dir, ablation) in RUNS {
        let run_dir = a.out.join(dir);
        let trained = train::run(&TrainArgs {
            data: a.data.clone(),
            config: a.config.clone(),
            ablate: ablation.into_iter().collect(),
            steps: a.steps,
            seed: None,
            resume: None,
            save_every: None,
            out: run_dir.join("train"),
        })?;
        let scored = eval::run(&EvalArgs {
            checkpoint: trained.checkpoint,
            data: a.data.clone(),
            partition: a.partition,
            out: run_dir.join("eval"),
        })?;
        let label = label_of(ablation);
        rows.push((label, scored.summary));
    }
    write_atomic(&a.out.join("ablation.csv"), comparison_csv(&rows).as_bytes())
}

fn label_of(ablation: Option<Ablation>) -> String {
    let mut ab = Ablations::default();
    match ablation {
        Some(Ablation::Text) => ab.text = true,
        Some(Ablation::Pose) => ab.pose = true,
        Some(Ablation::Apparent) => ab.apparent = true,
        None => {}
    }
    ab.label()
}
