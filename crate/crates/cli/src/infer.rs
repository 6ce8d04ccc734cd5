use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use vcrnet::data::{read_image, write_image, NUM_PARTS, PARTS};
use vcrnet::model::{load_checkpoint, predict};
use vcrnet::{tnsr, Error, Result, Tensor};

use crate::write_resolved;

pub const OVERLAY_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// PPM image of a person using the object.
    #[arg(long)]
    pub interactive_image: PathBuf,
    /// PPM image of the object alone.
    #[arg(long)]
    pub non_interactive_image: PathBuf,
    /// TNSR file of shape `[53×3]` with the pose of the interactive image.
    #[arg(long)]
    pub pose: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct InferRun<'a> {
    checkpoint: &'a Path,
    checkpoint_step: usize,
    interactive_image: &'a Path,
    non_interactive_image: &'a Path,
    pose: &'a Path,
}

/// Black-red-yellow-white ramp.
fn heat(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    [(3.0 * v).min(1.0), (3.0 * v - 1.0).clamp(0.0, 1.0), (3.0 * v - 2.0).clamp(0.0, 1.0)]
}

/// `img[3×H×W]` blended with the colored `map[H×W]`.
pub fn overlay(img: &Tensor, map: &[f64]) -> Result<Tensor> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 || s[1] * s[2] != map.len() {
        return Err(Error::Data(format!(
            "overlay: image shape {s:?} does not fit a map of {} pixels",
            map.len()
        )));
    }
    let plane = map.len();
    let mut out = img.clone();
    let d = out.data_mut();
    for (i, &v) in map.iter().enumerate() {
        let c = heat(v);
        for ch in 0..3 {
            let x = &mut d[ch * plane + i];
            *x = (1.0 - OVERLAY_ALPHA) * *x + OVERLAY_ALPHA * c[ch];
        }
    }
    Ok(out)
}

pub fn run(a: &InferArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let img_in = read_image(&a.interactive_image)?;
    let img_non = read_image(&a.non_interactive_image)?;
    if img_in.shape() != img_non.shape() {
        return Err(Error::Data(format!(
            "images differ in size: {:?} vs {:?}",
            img_in.shape(),
            img_non.shape()
        )));
    }
    let pose = tnsr::read(&a.pose)?;
    let (solver, ablations) = ck
        .manifest
        .train
        .as_ref()
        .map(|t| (t.solver, t.ablations))
        .unwrap_or_default();
    write_resolved(
        &a.out,
        "infer",
        &InferRun {
            checkpoint: &a.checkpoint,
            checkpoint_step: ck.manifest.step,
            interactive_image: &a.interactive_image,
            non_interactive_image: &a.non_interactive_image,
            pose: &a.pose,
        },
    )?;
    let pred = predict(&ck.model, &ck.store, &img_in, &img_non, &pose, &solver, ablations)?;
    let (h, w) = (img_in.shape()[1], img_in.shape()[2]);
    let plane = h * w;
    for (branch, maps, img) in [("in", &pred.d_in, &img_in), ("non", &pred.d_non, &img_non)] {
        for k in 0..NUM_PARTS {
            let m = &maps.data()[k * plane..(k + 1) * plane];
            tnsr::write(&Tensor::new(vec![h, w], m.to_vec())?, &a.out.join(format!("d_{branch}_{}.tnsr", PARTS[k])))?;
            write_image(&overlay(img, m)?, &a.out.join(format!("overlay_{branch}_{}.ppm", PARTS[k])))?;
        }
    }
    eprintln!("wrote {} heatmaps to {}", 2 * NUM_PARTS, a.out.display());
    Ok(())
}
