use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Seen,
    ObjUnseen,
    AffUnseen,
}

impl SplitKind {
    pub const ALL: [SplitKind; 3] = [SplitKind::Seen, SplitKind::ObjUnseen, SplitKind::AffUnseen];

    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Seen => "seen",
            SplitKind::ObjUnseen => "obj_unseen",
            SplitKind::AffUnseen => "aff_unseen",
        }
    }
}

impl std::str::FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?}; expected seen, obj_unseen or aff_unseen")))
    }
}

/// The labels a split partitions on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitItem {
    pub id: String,
    pub object: String,
    pub affordance: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub split: SplitKind,
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    /// Labels kept for training and held out, for the label-disjoint splits.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub train_labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub held_out_labels: Vec<String>,
}

/// Fraction of distinct labels held out by the label-disjoint splits.
const HELD_OUT_FRACTION: f64 = 0.3;

/// Deterministic train/val/test partition.
///
/// `Seen` shuffles items 7:2:1 (train `⌊0.7n⌋`, val `⌊0.1n⌋`, test the
/// rest). The unseen splits hold out whole object or affordance labels and
/// divide the held-out items 2:1 between test and val.
pub fn build_split(items: &[SplitItem], kind: SplitKind, seed: u64) -> Result<SplitManifest> {
    let mut rng = SplitMix64::fork(seed, kind as u64);
    let mut manifest = SplitManifest {
        split: kind,
        seed,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        train_labels: Vec::new(),
        held_out_labels: Vec::new(),
    };
    match kind {
        SplitKind::Seen => {
            let mut ids: Vec<String> = items.iter().map(|i| i.id.clone()).collect();
            ids.sort();
            rng.shuffle(&mut ids);
            let n = ids.len();
            let n_train = n * 7 / 10;
            let n_val = n / 10;
            manifest.train = ids[..n_train].to_vec();
            manifest.val = ids[n_train..n_train + n_val].to_vec();
            manifest.test = ids[n_train + n_val..].to_vec();
        }
        SplitKind::ObjUnseen | SplitKind::AffUnseen => {
            let label = |i: &SplitItem| -> String {
                if kind == SplitKind::ObjUnseen { i.object.clone() } else { i.affordance.clone() }
            };
            let mut labels: Vec<String> = items.iter().map(label).collect::<BTreeSet<_>>().into_iter().collect();
            if labels.len() < 2 {
                return Err(Error::Data(format!(
                    "{} split needs at least 2 distinct labels, found {}",
                    kind.name(),
                    labels.len()
                )));
            }
            rng.shuffle(&mut labels);
            let n_held = ((labels.len() as f64 * HELD_OUT_FRACTION).round() as usize).clamp(1, labels.len() - 1);
            let held: BTreeSet<String> = labels[..n_held].iter().cloned().collect();
            let mut train: Vec<String> = Vec::new();
            let mut rest: Vec<String> = Vec::new();
            for i in items {
                if held.contains(&label(i)) {
                    rest.push(i.id.clone());
                } else {
                    train.push(i.id.clone());
                }
            }
            train.sort();
            rest.sort();
            rng.shuffle(&mut rest);
            let n_val = rest.len() / 3;
            manifest.val = rest[..n_val].to_vec();
            manifest.test = rest[n_val..].to_vec();
            manifest.train = train;
            manifest.held_out_labels = held.into_iter().collect();
            manifest.train_labels = labels[n_held..].to_vec();
            manifest.train_labels.sort();
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(n: usize) -> Vec<SplitItem> {
        (0..n)
            .map(|i| SplitItem {
                id: format!("p{i:04}"),
                object: format!("obj{}", i % 14),
                affordance: format!("aff{}", i % 7),
            })
            .collect()
    }

    #[test]
    fn seen_ratio() {
        let m = build_split(&items(100), SplitKind::Seen, 1).unwrap();
        assert_eq!((m.train.len(), m.test.len(), m.val.len()), (70, 20, 10));
        let m = build_split(&items(33), SplitKind::Seen, 1).unwrap();
        assert_eq!((m.train.len(), m.val.len(), m.test.len()), (23, 3, 7));
        let all: BTreeSet<&String> = m.train.iter().chain(&m.val).chain(&m.test).collect();
        assert_eq!(all.len(), 33);
    }

    #[test]
    fn unseen_splits_are_label_disjoint() {
        let its = items(140);
        for (kind, key) in [(SplitKind::ObjUnseen, 0), (SplitKind::AffUnseen, 1)] {
            let m = build_split(&its, kind, 9).unwrap();
            let lab = |id: &String| {
                let i = its.iter().find(|i| &i.id == id).unwrap();
                if key == 0 { i.object.clone() } else { i.affordance.clone() }
            };
            let train: BTreeSet<String> = m.train.iter().map(lab).collect();
            let test: BTreeSet<String> = m.test.iter().map(lab).collect();
            assert!(train.is_disjoint(&test));
            assert!(!m.test.is_empty() && !m.train.is_empty());
            assert_eq!(m.test.len() + m.val.len() + m.train.len(), 140);
            assert_eq!(m.val.len(), (m.test.len() + m.val.len()) / 3);
        }
    }

    #[test]
    fn deterministic_and_needs_two_labels() {
        let its = items(50);
        assert_eq!(
            build_split(&its, SplitKind::ObjUnseen, 4).unwrap(),
            build_split(&its, SplitKind::ObjUnseen, 4).unwrap()
        );
        let one: Vec<SplitItem> = its.iter().cloned().map(|mut i| { i.affordance = "a".into(); i }).collect();
        assert!(matches!(build_split(&one, SplitKind::AffUnseen, 1), Err(Error::Data(_))));
        assert!("unseen".parse::<SplitKind>().is_err());
        assert_eq!("obj_unseen".parse::<SplitKind>().unwrap(), SplitKind::ObjUnseen);
    }
}
