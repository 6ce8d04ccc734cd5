use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use vcrnet::data::Dataset;
use vcrnet::deq::{DeqTrace, Solver};
use vcrnet::fsutil::{write_atomic, write_json};
use vcrnet::metrics::{
    aggregate, curves_csv, curves_svg, iteration_histogram, iteration_histogram_csv, mean_curve, report_csv,
    sample_csv, score_pair, MetricReport, MetricRow, ALL,
};
use vcrnet::model::{load_checkpoint, predict, Ablations};
use vcrnet::{Error, Result};

use crate::{write_resolved, DataArgs, Partition};

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub partition: Partition,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct EvalRun<'a> {
    checkpoint: &'a Path,
    checkpoint_step: usize,
    data: &'a Path,
    split: &'a str,
    partition: Partition,
    solver: Solver,
    ablations: Ablations,
}

/// Overall numbers written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub split: String,
    pub partition: Partition,
    pub aggregation: &'static str,
    pub samples: usize,
    pub scored_maps: usize,
    pub deq_calls_per_sample: usize,
    pub nss_degenerate: usize,
    pub kld: f64,
    pub sim: f64,
    pub nss: f64,
    pub max_fmeasure: f64,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub rows: Vec<MetricRow>,
    pub report: MetricReport,
    pub summary: EvalSummary,
}

pub fn run(a: &EvalArgs) -> Result<EvalOutcome> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let (solver, ablations) = ck
        .manifest
        .train
        .as_ref()
        .map(|t| (t.solver, t.ablations))
        .unwrap_or_default();
    let ds = Dataset::open(&a.data.data)?;
    let manifest = ds.split(a.data.split)?;
    let ids = a.partition.ids(&manifest);
    if ids.is_empty() {
        return Err(Error::Data(format!(
            "split {} has no {:?} pairs",
            a.data.split.name(),
            a.partition
        )));
    }
    let split = a.data.split.name();
    write_resolved(
        &a.out,
        "eval",
        &EvalRun {
            checkpoint: &a.checkpoint,
            checkpoint_step: ck.manifest.step,
            data: &a.data.data,
            split,
            partition: a.partition,
            solver,
            ablations,
        },
    )?;
    let scored: Vec<Result<_>> = ids
        .par_iter()
        .map(|id| {
            let pair = ds.load(id)?;
            let pred = predict(&ck.model, &ck.store, &pair.img_in, &pair.img_non, &pair.pose, &solver, ablations)?;
            let (rows, curves) = score_pair(split, &pair, &pred.d_non)?;
            Ok((rows, curves, pred.traces))
        })
        .collect();
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let mut traces: Vec<DeqTrace> = Vec::new();
    for r in scored {
        let (r, c, t) = r?;
        rows.extend(r);
        curves.extend(c);
        traces.extend(t);
    }
    let report = aggregate(&rows);
    let curve = mean_curve(&curves)?;
    let hist = iteration_histogram(&traces);
    let overall = report
        .find(split, ALL, ALL)
        .ok_or_else(|| Error::Data("no part channel could be scored".into()))?;
    let summary = EvalSummary {
        split: split.to_string(),
        partition: a.partition,
        aggregation: "per-image metrics, then mean within each group",
        samples: ids.len(),
        scored_maps: rows.len(),
        deq_calls_per_sample: traces.len() / ids.len(),
        nss_degenerate: rows.iter().filter(|r| r.nss_degenerate).count(),
        kld: overall.kld,
        sim: overall.sim,
        nss: overall.nss,
        max_fmeasure: curve.iter().map(|p| p.fmeasure).fold(0.0, f64::max),
    };
    write_atomic(&a.out.join("samples.csv"), sample_csv(&rows)?.as_bytes())?;
    write_atomic(&a.out.join("report.csv"), report_csv(&report)?.as_bytes())?;
    write_atomic(&a.out.join("curves.csv"), curves_csv(&curve)?.as_bytes())?;
    write_atomic(&a.out.join("curves.svg"), curves_svg(&curve).as_bytes())?;
    write_atomic(&a.out.join("iterations.csv"), iteration_histogram_csv(&hist)?.as_bytes())?;
    write_json(&a.out.join("summary.json"), &summary)?;
    eprintln!(
        "{split}/{:?}: {} samples, KLD {:.4} SIM {:.4} NSS {:.4}",
        a.partition, summary.samples, summary.kld, summary.sim, summary.nss
    );
    Ok(EvalOutcome { rows, report, summary })
}
