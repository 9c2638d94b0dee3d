use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{io_err, Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Named tensors with a version header, serialized as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub tensors: BTreeMap<String, Tensor>,
    /// Free-form metadata (model configuration, graph hashes).
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(tensors: BTreeMap<String, Tensor>, meta: serde_json::Value) -> Self {
        Self { version: CHECKPOINT_VERSION, tensors, meta }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_vec(self)?).map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion(ck.version));
        }
        for (name, t) in &ck.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Shape(format!("checkpoint tensor {name} has shape {:?} but {} values", t.shape, t.data.len())));
            }
        }
        Ok(ck)
    }
}
