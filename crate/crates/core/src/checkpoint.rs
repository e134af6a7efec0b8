//! On-disk parameter checkpoints (CBOR).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bev::GridSpec;
use crate::error::{Error, Result};
use crate::nn::NamedTensors;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: String,
    pub grid: GridSpec,
    /// JSON of the model configuration.
    pub config: String,
    pub config_hash: String,
    pub params: Vec<(String, NamedTensors)>,
    /// JSON of the run configuration that produced the checkpoint.
    #[serde(default)]
    pub provenance: Option<String>,
}

pub fn config_hash(json: &str) -> String {
    hex::encode(Sha256::digest(json.as_bytes()))
}

impl Checkpoint {
    pub fn new(kind: &str, grid: GridSpec, config: &impl Serialize, params: Vec<(String, NamedTensors)>) -> Result<Self> {
        let config = serde_json::to_string(config).map_err(|e| Error::Encoding(e.to_string()))?;
        Ok(Self { kind: kind.into(), grid, config_hash: config_hash(&config), config, params, provenance: None })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let w = BufWriter::new(File::create(path)?);
        ciborium::into_writer(self, w).map_err(|e| Error::Encoding(e.to_string()))
    }

    /// Loads and checks kind, grid and config integrity.
    pub fn load(path: &Path, kind: &str, grid: Option<&GridSpec>) -> Result<Self> {
        if !path.exists() {
            return Err(Error::CheckpointNotFound(path.to_path_buf()));
        }
        let r = BufReader::new(File::open(path)?);
        let ck: Checkpoint = ciborium::from_reader(r).map_err(|e| Error::Encoding(e.to_string()))?;
        if ck.kind != kind {
            return Err(Error::Encoding(format!("checkpoint holds a {} model, expected {kind}", ck.kind)));
        }
        if config_hash(&ck.config) != ck.config_hash {
            return Err(Error::Encoding("checkpoint config hash does not match its config".into()));
        }
        if let Some(g) = grid {
            if *g != ck.grid {
                return Err(Error::GridMismatch(format!("checkpoint grid {:?} differs from {:?}", ck.grid, g)));
            }
        }
        Ok(ck)
    }

    /// Rewrites the checkpoint at `path` with `run_json` as its provenance record.
    pub fn stamp(path: &Path, run_json: &str) -> Result<()> {
        if !path.exists() {
            return Err(Error::CheckpointNotFound(path.to_path_buf()));
        }
        let r = BufReader::new(File::open(path)?);
        let mut ck: Checkpoint = ciborium::from_reader(r).map_err(|e| Error::Encoding(e.to_string()))?;
        ck.provenance = Some(run_json.to_string());
        ck.save(path)
    }

    pub fn config<C: for<'de> Deserialize<'de>>(&self) -> Result<C> {
        serde_json::from_str(&self.config).map_err(|e| Error::Encoding(e.to_string()))
    }

    pub fn part(&self, name: &str) -> Result<&NamedTensors> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t).ok_or_else(|| Error::Encoding(format!("checkpoint has no {name} parameters")))
    }
}
