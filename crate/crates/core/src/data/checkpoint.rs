//! Checkpoint directories: `manifest.json` plus one tensor file per
//! parameter, buffer, optimizer moment and extra tensor.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tensor_file::{read_tensor, write_tensor};
use crate::error::{Error, Result};
use crate::models::ModelConfig;
use crate::nn::{Adam, AdamConfig, ParamStore};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerManifest {
    pub config: AdamConfig,
    pub step: u64,
    pub tensors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub model: ModelConfig,
    /// Task names in class-index order.
    pub classes: Vec<String>,
    /// Epochs completed when the checkpoint was written.
    pub epoch: usize,
    pub params: Vec<String>,
    pub buffers: Vec<String>,
    /// Auxiliary tensors such as task heatmaps.
    pub extras: Vec<String>,
    pub optimizer: Option<OptimizerManifest>,
}

/// Everything a checkpoint holds, in memory.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub classes: Vec<String>,
    pub epoch: usize,
    pub store: ParamStore,
    pub extras: BTreeMap<String, Tensor>,
    pub optimizer: Option<Adam>,
}

fn file_for(dir: &Path, group: &str, name: &str) -> PathBuf {
    dir.join(group).join(format!("{name}.ftns"))
}

impl Checkpoint {
    /// Writes the checkpoint to `dir`, replacing any previous one only once the new one is complete.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent)?;
        let base = dir
            .file_name()
            .ok_or_else(|| Error::Checkpoint(format!("bad checkpoint path {}", dir.display())))?
            .to_string_lossy()
            .to_string();
        let tmp = parent.join(format!(".{base}.tmp-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        for (group, map) in [("params", self.store.params()), ("buffers", self.store.buffers())] {
            fs::create_dir_all(tmp.join(group))?;
            for (name, t) in map {
                write_tensor(&file_for(&tmp, group, name), t)?;
            }
        }
        fs::create_dir_all(tmp.join("extras"))?;
        for (name, t) in &self.extras {
            write_tensor(&file_for(&tmp, "extras", name), t)?;
        }
        let optimizer = match &self.optimizer {
            Some(adam) => {
                fs::create_dir_all(tmp.join("optimizer"))?;
                let tensors = adam.state_tensors(&self.store)?;
                for (name, t) in &tensors {
                    write_tensor(&file_for(&tmp, "optimizer", name), t)?;
                }
                Some(OptimizerManifest {
                    config: adam.config,
                    step: adam.step_count(),
                    tensors: tensors.keys().cloned().collect(),
                })
            }
            None => None,
        };
        let manifest = Manifest {
            format: FORMAT_VERSION,
            model: self.model.clone(),
            classes: self.classes.clone(),
            epoch: self.epoch,
            params: self.store.params().keys().cloned().collect(),
            buffers: self.store.buffers().keys().cloned().collect(),
            extras: self.extras.keys().cloned().collect(),
            optimizer,
        };
        fs::write(tmp.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
        if dir.exists() {
            let old = parent.join(format!(".{base}.old-{}", std::process::id()));
            fs::rename(dir, &old)?;
            fs::rename(&tmp, dir)?;
            fs::remove_dir_all(&old)?;
        } else {
            fs::rename(&tmp, dir)?;
        }
        Ok(())
    }

    pub fn read_manifest(dir: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(dir.join(MANIFEST))
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", dir.join(MANIFEST).display())))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint format {}", m.format)));
        }
        Ok(m)
    }

    pub fn load(dir: &Path) -> Result<Checkpoint> {
        let m = Self::read_manifest(dir)?;
        let read = |group: &str, name: &str| {
            read_tensor(&file_for(dir, group, name))
                .map_err(|e| Error::Checkpoint(format!("{group} tensor `{name}`: {e}")))
        };
        let mut store = ParamStore::new();
        for name in &m.params {
            store.insert_param(name.clone(), read("params", name)?);
        }
        for name in &m.buffers {
            store.insert_buffer(name.clone(), read("buffers", name)?);
        }
        let extras = m
            .extras
            .iter()
            .map(|n| Ok((n.clone(), read("extras", n)?)))
            .collect::<Result<_>>()?;
        let optimizer = match &m.optimizer {
            Some(o) => {
                let tensors: BTreeMap<String, Tensor> = o
                    .tensors
                    .iter()
                    .map(|n| Ok((n.clone(), read("optimizer", n)?)))
                    .collect::<Result<_>>()?;
                Some(Adam::from_state(o.config, o.step, &tensors)?)
            }
            None => None,
        };
        Ok(Checkpoint {
            model: m.model,
            classes: m.classes,
            epoch: m.epoch,
            store,
            extras,
            optimizer,
        })
    }

    /// Loads `dir` and checks that it was written for exactly `expected`.
    pub fn load_for(dir: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
        let ck = Self::load(dir)?;
        ck.check_model(expected)?;
        Ok(ck)
    }

    pub fn check_model(&self, expected: &ModelConfig) -> Result<()> {
        if &self.model != expected {
            if self.model.family == expected.family && self.model.architecture == expected.architecture {
                return Err(Error::Checkpoint(format!(
                    "checkpoint {:?} model has a different configuration than requested",
                    self.model.family
                )));
            }
            return Err(Error::Checkpoint(format!(
                "checkpoint holds a {:?} model{} but a {:?} model{} was requested",
                self.model.family,
                arch_suffix(&self.model),
                expected.family,
                arch_suffix(expected),
            )));
        }
        Ok(())
    }
}

fn arch_suffix(c: &ModelConfig) -> String {
    c.architecture.map(|a| format!(" (architecture {a:?})")).unwrap_or_default()
}
