//! Annotation processing, the synthetic paired-scene generator, split
//! manifests and the on-disk dataset layout.

mod annotations;
mod dataset;
mod heatmap;
mod ppm;
mod split;
mod synth;

pub use annotations::{load_annotations, save_annotations, AnnotationRecord};
pub use dataset::{generate_dataset, Dataset, GenerateConfig};
pub use heatmap::{gaussian_taps, kernel_size, points_to_heatmap};
pub use ppm::{decode_ppm, encode_ppm, read_image, write_image};
pub use split::{build_split, SplitItem, SplitKind, SplitManifest};
pub use synth::{generate_pair, AffordanceClass, CLASSES};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Body parts (plus the object's external contact), in heatmap channel order.
pub const PARTS: [&str; 7] = ["hand", "feet", "mouth", "hips", "back", "eye", "outside"];
pub const NUM_PARTS: usize = PARTS.len();

pub fn part_index(name: &str) -> Option<usize> {
    PARTS.iter().position(|p| *p == name)
}

/// Raw contact points `(x, y)` per part.
pub type PartPoints = [Vec<(usize, usize)>; NUM_PARTS];

/// Stack one heatmap per part into `[7×h×w]`.
pub fn part_heatmaps(points: &PartPoints, h: usize, w: usize, origin: &str) -> Result<Tensor> {
    let mut data = Vec::with_capacity(NUM_PARTS * h * w);
    for (part, pts) in PARTS.iter().zip(points) {
        let m = points_to_heatmap(pts, h, w, &format!("{origin}/{part}"))?;
        data.extend_from_slice(m.data());
    }
    Tensor::new(vec![NUM_PARTS, h, w], data)
}

/// Reverse the last axis of a `[C×H×W]` tensor.
fn mirror(t: &Tensor) -> Tensor {
    let w = t.shape()[2];
    let data = t.data().chunks(w).flat_map(|row| row.iter().rev().copied()).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

/// One interactive / non-interactive training pair of the same affordance.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub id: String,
    pub affordance: String,
    pub object: String,
    /// `[3×H×W]` in `[0, 1]`.
    pub img_in: Tensor,
    pub img_non: Tensor,
    /// `[53×3]`: x and y divided by the image side, plus relative depth.
    pub pose: Tensor,
    /// `[7×H×W]` in `[0, 1]`.
    pub gt_in: Tensor,
    pub gt_non: Tensor,
    pub fix_in: PartPoints,
    pub fix_non: PartPoints,
}

impl SamplePair {
    pub fn size(&self) -> (usize, usize) {
        (self.img_in.shape()[1], self.img_in.shape()[2])
    }

    /// Parts with at least one contact point in the non-interactive image.
    pub fn active_parts(&self) -> Vec<usize> {
        (0..NUM_PARTS).filter(|&k| !self.fix_non[k].is_empty()).collect()
    }

    /// Mirror left-right: images, heatmaps, contact points and pose x.
    pub fn flipped(&self) -> SamplePair {
        let (_, w) = self.size();
        let flip_pts = |pts: &PartPoints| -> PartPoints {
            std::array::from_fn(|k| pts[k].iter().map(|&(x, y)| (w - 1 - x, y)).collect())
        };
        let mut pose = self.pose.clone();
        let shift = (w - 1) as f64 / w as f64;
        for row in pose.data_mut().chunks_mut(3) {
            row[0] = shift - row[0];
        }
        pose.round_f32();
        SamplePair {
            id: self.id.clone(),
            affordance: self.affordance.clone(),
            object: self.object.clone(),
            img_in: mirror(&self.img_in),
            img_non: mirror(&self.img_non),
            pose,
            gt_in: mirror(&self.gt_in),
            gt_non: mirror(&self.gt_non),
            fix_in: flip_pts(&self.fix_in),
            fix_non: flip_pts(&self.fix_non),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.size();
        let checks: [(&str, &Tensor, &[usize]); 5] = [
            ("img_in", &self.img_in, &[3, h, w]),
            ("img_non", &self.img_non, &[3, h, w]),
            ("pose", &self.pose, &[crate::blocks::NUM_JOINTS, 3]),
            ("gt_in", &self.gt_in, &[NUM_PARTS, h, w]),
            ("gt_non", &self.gt_non, &[NUM_PARTS, h, w]),
        ];
        for (name, t, shape) in checks {
            if t.shape() != shape {
                return Err(Error::Data(format!(
                    "pair {}: {name} has shape {:?}, expected {shape:?}",
                    self.id,
                    t.shape()
                )));
            }
        }
        for (name, t) in [("gt_in", &self.gt_in), ("gt_non", &self.gt_non)] {
            if t.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Data(format!("pair {}: {name} outside [0, 1]", self.id)));
            }
        }
        Ok(())
    }
}
