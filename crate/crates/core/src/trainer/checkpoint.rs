use std::path::{Path, PathBuf};

use ndarray_npy::{read_npy, write_npy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, SacAgent};
use crate::error::{Error, Result};
use crate::marketdata::DatasetManifest;
use crate::nn::Mat;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub group: String,
    pub name: String,
    pub file: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config_hash: String,
    pub dataset_hash: String,
    pub episodes: usize,
    pub agent: AgentConfig,
    pub parameters: Vec<ParamEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub agent: SacAgent,
    /// Non-fatal problems found while loading, already logged.
    pub warnings: Vec<String>,
}

fn npy_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Serde(format!("{}: {e}", path.display()))
}

pub fn save_checkpoint(
    dir: &Path,
    agent: &SacAgent,
    config_hash: &str,
    dataset_hash: &str,
    episodes: usize,
) -> Result<CheckpointManifest> {
    let mut parameters = Vec::new();
    for (group, store) in agent.params.groups() {
        let group_dir = dir.join("params").join(group);
        std::fs::create_dir_all(&group_dir).map_err(|e| Error::io(&group_dir, e))?;
        for p in store.iter() {
            let file = format!("params/{group}/{}.npy", p.name);
            let path = dir.join(&file);
            write_npy(&path, &p.value).map_err(|e| npy_err(&path, e))?;
            parameters.push(ParamEntry {
                group: group.to_string(),
                name: p.name.clone(),
                file,
                shape: [p.value.nrows(), p.value.ncols()],
            });
        }
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config_hash: config_hash.to_string(),
        dataset_hash: dataset_hash.to_string(),
        episodes,
        agent: agent.cfg.clone(),
        parameters,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Loads a checkpoint; a dataset whose manifest hash differs from the recorded one
/// only produces a warning.
pub fn load_checkpoint(dir: &Path, dataset: Option<&DatasetManifest>) -> Result<Checkpoint> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found,
            expected: CHECKPOINT_FORMAT_VERSION,
        });
    }
    let manifest: CheckpointManifest = serde_json::from_value(value)?;

    // Rebuilding from the config reproduces the parameter layout; values are then overwritten.
    let mut agent = SacAgent::new(manifest.agent.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut seen = 0;
    for entry in &manifest.parameters {
        let store = agent
            .params
            .group_mut(&entry.group)
            .ok_or_else(|| Error::Validation(format!("unknown parameter group `{}`", entry.group)))?;
        let id = store
            .id(&entry.name)
            .ok_or_else(|| Error::Validation(format!("unexpected parameter `{}`", entry.name)))?;
        let file: PathBuf = dir.join(&entry.file);
        let value: Mat = read_npy(&file).map_err(|e| npy_err(&file, e))?;
        if value.dim() != store.get(id).dim() {
            return Err(Error::Shape(format!(
                "parameter `{}` has shape {:?}, model expects {:?}",
                entry.name,
                value.dim(),
                store.get(id).dim()
            )));
        }
        *store.get_mut(id) = value;
        seen += 1;
    }
    let expected: usize = agent.params.groups().iter().map(|(_, s)| s.len()).sum();
    if seen != expected {
        return Err(Error::Validation(format!("checkpoint has {seen} parameters, model has {expected}")));
    }

    let mut warnings = Vec::new();
    if let Some(ds) = dataset {
        let h = ds.hash();
        if h != manifest.dataset_hash {
            let msg = format!(
                "dataset hash {h} differs from the one recorded in the checkpoint ({})",
                manifest.dataset_hash
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(Checkpoint {
        manifest,
        agent,
        warnings,
    })
}
