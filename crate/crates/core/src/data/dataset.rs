//! On-disk layout of a generated dataset:
//!
//! ```text
//! dataset.json              generation config
//! annotations.json          two records per pair (`<id>_in`, `<id>_non`)
//! pairs/<id>/in.ppm
//! pairs/<id>/non.ppm
//! pairs/<id>/pose.tnsr      [53×3]
//! pairs/<id>/gt_in.tnsr     [7×H×W]
//! pairs/<id>/gt_non.tnsr
//! splits/<split>.json
//! ```
//!
//! Heatmaps are recomputed from the annotated points on load; the stored
//! `gt_*.tnsr` files are for inspection.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::annotations::{load_annotations, save_annotations, AnnotationRecord};
use super::ppm::{read_image, write_image};
use super::split::{build_split, SplitItem, SplitKind, SplitManifest};
use super::synth::{generate_scene, CLASSES};
use super::{part_heatmaps, SamplePair};
use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};
use crate::rng::SplitMix64;
use crate::tnsr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub seed: u64,
    /// Total number of pairs; classes are assigned round-robin.
    pub count: usize,
    pub size: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 70,
            size: 224,
        }
    }
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("count must be at least 1".into()));
        }
        if self.size < 32 || self.size % 32 != 0 {
            return Err(Error::Config(format!("size must be a positive multiple of 32, got {}", self.size)));
        }
        Ok(())
    }
}

fn pair_dir(root: &Path, id: &str) -> PathBuf {
    root.join("pairs").join(id)
}

fn side(image_id: &str) -> &str {
    if image_id.ends_with("_non") {
        "non"
    } else {
        "in"
    }
}

fn pair_seed(seed: u64, index: usize) -> u64 {
    SplitMix64::fork(seed, index as u64).next_u64()
}

/// Generate pairs for every class, write them under `root` and build all splits.
pub fn generate_dataset(root: &Path, cfg: &GenerateConfig) -> Result<Dataset> {
    cfg.validate()?;
    let n = cfg.count;
    let scenes: Vec<(SamplePair, [[usize; 4]; 2])> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (mut pair, boxes) = generate_scene(pair_seed(cfg.seed, i), &CLASSES[i % CLASSES.len()], cfg.size)?;
            pair.id = format!("p{i:05}");
            Ok((pair, boxes))
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(2 * n);
    for (pair, boxes) in &scenes {
        let dir = pair_dir(root, &pair.id);
        let sides = [("in", &pair.img_in, &pair.fix_in, boxes[0]), ("non", &pair.img_non, &pair.fix_non, boxes[1])];
        for (side, img, fix, bbox) in sides {
            let image_id = format!("{}_{side}", pair.id);
            write_image(img, &dir.join(format!("{side}.ppm")))?;
            let mut rec = AnnotationRecord {
                image_id,
                pair_id: pair.id.clone(),
                affordance: pair.affordance.clone(),
                object: pair.object.clone(),
                width: cfg.size,
                height: cfg.size,
                bboxes: vec![bbox],
                points: BTreeMap::new(),
            };
            rec.set_points(fix);
            records.push(rec);
        }
        tnsr::write(&pair.pose, &dir.join("pose.tnsr"))?;
        tnsr::write(&pair.gt_in, &dir.join("gt_in.tnsr"))?;
        tnsr::write(&pair.gt_non, &dir.join("gt_non.tnsr"))?;
    }
    save_annotations(&root.join("annotations.json"), &records)?;
    write_json(&root.join("dataset.json"), cfg)?;

    let ds = Dataset::open(root)?;
    for kind in SplitKind::ALL {
        let manifest = build_split(&ds.split_items(), kind, cfg.seed)?;
        write_json(&root.join("splits").join(format!("{}.json", kind.name())), &manifest)?;
    }
    Ok(ds)
}

/// A generated dataset opened for reading.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    /// `(interactive, non-interactive)` record per pair id.
    pairs: BTreeMap<String, (AnnotationRecord, AnnotationRecord)>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let records = load_annotations(&root.join("annotations.json"))?;
        let mut halves: BTreeMap<String, [Option<AnnotationRecord>; 2]> = BTreeMap::new();
        for r in records {
            let slot = if r.image_id.ends_with("_in") {
                0
            } else if r.image_id.ends_with("_non") {
                1
            } else {
                return Err(Error::Data(format!("{}: image id must end in _in or _non", r.image_id)));
            };
            let key = r.pair_id.clone();
            halves.entry(key).or_default()[slot] = Some(r);
        }
        let pairs = halves
            .into_iter()
            .map(|(id, [a, b])| match (a, b) {
                (Some(a), Some(b)) => Ok((id, (a, b))),
                _ => Err(Error::Data(format!("pair {id} lacks an interactive or non-interactive record"))),
            })
            .collect::<Result<_>>()?;
        Ok(Self { root: root.to_path_buf(), pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.pairs.keys().map(String::as_str)
    }

    pub fn split_items(&self) -> Vec<SplitItem> {
        self.pairs
            .iter()
            .map(|(id, (r, _))| SplitItem {
                id: id.clone(),
                object: r.object.clone(),
                affordance: r.affordance.clone(),
            })
            .collect()
    }

    pub fn split(&self, kind: SplitKind) -> Result<SplitManifest> {
        read_json(&self.root.join("splits").join(format!("{}.json", kind.name())))
    }

    pub fn load(&self, id: &str) -> Result<SamplePair> {
        let (rin, rnon) = self
            .pairs
            .get(id)
            .ok_or_else(|| Error::Data(format!("unknown pair id {id:?}")))?;
        let dir = pair_dir(&self.root, id);
        let img = |r: &AnnotationRecord| read_image(&dir.join(format!("{}.ppm", side(&r.image_id))));
        let fix_in = rin.part_points()?;
        let fix_non = rnon.part_points()?;
        let pair = SamplePair {
            id: id.to_string(),
            affordance: rin.affordance.clone(),
            object: rin.object.clone(),
            img_in: img(rin)?,
            img_non: img(rnon)?,
            pose: tnsr::read(&dir.join("pose.tnsr"))?,
            gt_in: part_heatmaps(&fix_in, rin.height, rin.width, &rin.image_id)?,
            gt_non: part_heatmaps(&fix_non, rnon.height, rnon.width, &rnon.image_id)?,
            fix_in,
            fix_non,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn load_many(&self, ids: &[String]) -> Result<Vec<SamplePair>> {
        ids.par_iter().map(|id| self.load(id)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::generate_pair;
    use std::collections::BTreeSet;

    #[test]
    fn generate_then_load_matches_generator() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenerateConfig { seed: 5, count: 14, size: 64 };
        let ds = generate_dataset(dir.path(), &cfg).unwrap();
        assert_eq!(ds.len(), 14);
        let loaded = ds.load("p00003").unwrap();
        let mut direct = generate_pair(pair_seed(5, 3), &CLASSES[3], 64).unwrap();
        direct.id = "p00003".into();
        assert_eq!(loaded, direct);

        for kind in SplitKind::ALL {
            let m = ds.split(kind).unwrap();
            let all: BTreeSet<&String> = m.train.iter().chain(&m.val).chain(&m.test).collect();
            assert_eq!(all.len(), 14);
        }
        assert!(ds.load("nope").is_err());
        let dirs = std::fs::read_dir(dir.path().join("pairs")).unwrap().count();
        assert_eq!(dirs, 14);
        let again = tempfile::tempdir().unwrap();
        generate_dataset(again.path(), &cfg).unwrap();
        for f in ["annotations.json", "splits/obj_unseen.json", "pairs/p00007/in.ppm", "pairs/p00007/gt_non.tnsr"] {
            assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(again.path().join(f)).unwrap());
        }
    }

    #[test]
    fn config_validation() {
        let bad = GenerateConfig { size: 50, ..GenerateConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = GenerateConfig { count: 0, ..GenerateConfig::default() };
        assert!(bad.validate().is_err());
    }
}
