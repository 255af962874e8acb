use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Ordered, named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            parameters: self
                .iter()
                .map(|(_, name, t)| CheckpointEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Overwrites every parameter from `checkpoint`, matching by name and shape.
    pub fn load_checkpoint(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        if checkpoint.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported checkpoint format version {}",
                checkpoint.format_version
            )));
        }
        if checkpoint.parameters.len() != self.len() {
            return Err(Error::Schema(format!(
                "checkpoint holds {} parameters, model has {}",
                checkpoint.parameters.len(),
                self.len()
            )));
        }
        for entry in &checkpoint.parameters {
            let id = self
                .by_name(&entry.name)
                .ok_or_else(|| Error::Schema(format!("unknown parameter {:?}", entry.name)))?;
            if self.get(id).shape() != entry.shape.as_slice() {
                return Err(Error::Schema(format!(
                    "parameter {:?}: checkpoint shape {:?} != model shape {:?}",
                    entry.name,
                    entry.shape,
                    self.get(id).shape()
                )));
            }
            self.tensors[id.0] = Tensor::new(entry.shape.clone(), entry.data.clone())
                .map_err(|e| Error::Schema(format!("parameter {:?}: {e}", entry.name)))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint())?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let checkpoint: Checkpoint = serde_json::from_str(&text)?;
        self.load_checkpoint(&checkpoint)
    }
}

/// On-disk parameter checkpoint: names mapped to shape and row-major data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub parameters: Vec<CheckpointEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::matrix(2, 2, vec![0.1, -1.0 / 3.0, 1e-300, 7.25]).unwrap());
        store.add("b", Tensor::new(vec![2], vec![std::f64::consts::PI, -0.0]).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        store.save(&path).unwrap();

        let mut other = store.clone();
        other.get_mut(ParamId(0)).data_mut().fill(0.0);
        other.load(&path).unwrap();
        assert_eq!(other, store);
    }

    #[test]
    fn load_rejects_shape_and_version_mismatch() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[2, 2]));
        let mut ckpt = store.to_checkpoint();
        ckpt.parameters[0].shape = vec![4];
        assert!(matches!(store.load_checkpoint(&ckpt), Err(Error::Schema(_))));

        let mut ckpt = store.to_checkpoint();
        ckpt.format_version = 99;
        assert!(matches!(store.load_checkpoint(&ckpt), Err(Error::Schema(_))));
    }
}
