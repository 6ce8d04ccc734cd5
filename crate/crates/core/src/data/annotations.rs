use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{part_index, PartPoints, NUM_PARTS, PARTS};
use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};

/// One annotated image: labels, object boxes and contact points per part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    /// Both images of a training pair share this id.
    pub pair_id: String,
    pub affordance: String,
    pub object: String,
    pub width: usize,
    pub height: usize,
    /// `[x, y, w, h]` in pixels.
    #[serde(default)]
    pub bboxes: Vec<[usize; 4]>,
    /// Part name to `[x, y]` pixel coordinates, origin top-left.
    #[serde(default)]
    pub points: BTreeMap<String, Vec<[usize; 2]>>,
}

impl AnnotationRecord {
    /// Points per part in channel order, checked against the part set and image bounds.
    pub fn part_points(&self) -> Result<PartPoints> {
        let mut out: PartPoints = Default::default();
        for (part, pts) in &self.points {
            let k = part_index(part).ok_or_else(|| {
                Error::Data(format!(
                    "{}: unknown part {part:?}, expected one of {PARTS:?}",
                    self.image_id
                ))
            })?;
            for &[x, y] in pts {
                if x >= self.width || y >= self.height {
                    return Err(Error::Data(format!(
                        "{}: {part} point ({x}, {y}) outside {}x{} image",
                        self.image_id, self.width, self.height
                    )));
                }
                out[k].push((x, y));
            }
        }
        Ok(out)
    }

    pub fn set_points(&mut self, points: &PartPoints) {
        self.points = (0..NUM_PARTS)
            .filter(|&k| !points[k].is_empty())
            .map(|k| (PARTS[k].to_string(), points[k].iter().map(|&(x, y)| [x, y]).collect()))
            .collect();
    }
}

/// Read and validate an annotation file (a JSON array of records).
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let records: Vec<AnnotationRecord> = read_json(path)?;
    for r in &records {
        r.part_points()?;
    }
    Ok(records)
}

pub fn save_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    write_json(path, &records)
}
