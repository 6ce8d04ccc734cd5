//! Checkpoint directory:
//!
//! ```text
//! manifest.json
//! params/<name>.tnsr
//! optim/m/<name>.tnsr     only when optimizer state is saved
//! optim/v/<name>.tnsr
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::AdamW;
use super::train::TrainConfig;
use super::{ModelConfig, VcrNet};
use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::tnsr;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub version: u32,
    pub model: ModelConfig,
    /// Completed training steps.
    pub step: usize,
    /// Parameter name to file, relative to the checkpoint directory.
    pub params: BTreeMap<String, String>,
    #[serde(default)]
    pub optimizer: Option<AdamW>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: VcrNet,
    pub store: ParamStore,
    pub optimizer: Option<AdamW>,
    pub manifest: CheckpointManifest,
}

fn file_for(kind: &str, name: &str) -> String {
    format!("{kind}/{name}.tnsr")
}

pub fn save_checkpoint(
    dir: &Path,
    model: &VcrNet,
    store: &ParamStore,
    optimizer: Option<&AdamW>,
    step: usize,
    train: Option<&TrainConfig>,
) -> Result<()> {
    let mut params = BTreeMap::new();
    for (i, (_, name, value)) in store.iter().enumerate() {
        let file = file_for("params", name);
        tnsr::write(value, &dir.join(&file))?;
        params.insert(name.to_string(), file);
        if let Some(opt) = optimizer {
            tnsr::write(&opt.m[i], &dir.join(file_for("optim/m", name)))?;
            tnsr::write(&opt.v[i], &dir.join(file_for("optim/v", name)))?;
        }
    }
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        model: model.config.clone(),
        step,
        params,
        optimizer: optimizer.cloned(),
        train: train.cloned(),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest: CheckpointManifest = read_json(&dir.join("manifest.json"))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {} is not supported (expected {CHECKPOINT_VERSION})",
            dir.display(),
            manifest.version
        )));
    }
    let (model, mut store) = VcrNet::new(&manifest.model)?;
    if manifest.params.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "{}: manifest lists {} parameters, model has {}",
            dir.display(),
            manifest.params.len(),
            store.len()
        )));
    }
    let read_like = |path: &Path, expected: &Tensor| -> Result<Tensor> {
        let t = tnsr::read(path)?;
        if t.shape() != expected.shape() {
            return Err(Error::Checkpoint(format!(
                "{}: shape {:?} does not match model shape {:?}",
                path.display(),
                t.shape(),
                expected.shape()
            )));
        }
        Ok(t)
    };
    let ids: Vec<_> = store.ids().collect();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for id in ids {
        let name = store.name(id).to_string();
        let file = manifest
            .params
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("{}: parameter {name} missing", dir.display())))?;
        let t = read_like(&dir.join(file), store.get(id))?;
        if manifest.optimizer.is_some() {
            m.push(read_like(&dir.join(file_for("optim/m", &name)), &t)?);
            v.push(read_like(&dir.join(file_for("optim/v", &name)), &t)?);
        }
        store.set(id, t)?;
    }
    let optimizer = manifest.optimizer.clone().map(|mut opt| {
        opt.m = m;
        opt.v = v;
        opt
    });
    Ok(Checkpoint {
        model,
        store,
        optimizer,
        manifest,
    })
}
