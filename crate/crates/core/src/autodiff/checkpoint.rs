use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::Parameter;
use crate::error::{GinError, Result};

const BLOB: &str = "params.bin";
const MANIFEST: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub seed: u64,
    pub step: u64,
}

/// Writes every parameter into `dir` as little-endian `f64`s, in order,
/// next to a JSON manifest of names and shapes.
pub fn save_checkpoint(dir: &Path, params: &[&Parameter], seed: u64, step: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| GinError::io(dir, e))?;
    let total: usize = params.iter().map(|p| p.value.len()).sum();
    let mut bytes = Vec::with_capacity(total * 8);
    for p in params {
        for v in p.value.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let blob = dir.join(BLOB);
    fs::write(&blob, bytes).map_err(|e| GinError::io(&blob, e))?;
    let manifest = CheckpointManifest {
        names: params.iter().map(|p| p.name().to_string()).collect(),
        shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
        seed,
        step,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| GinError::io(&path, e))?;
    Ok(())
}

/// Reads a checkpoint back as named parameters.
pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointManifest, Vec<Parameter>)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| GinError::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.names.len() != manifest.shapes.len() {
        return Err(GinError::Serde("checkpoint names and shapes differ in length".into()));
    }
    let blob = dir.join(BLOB);
    let bytes = fs::read(&blob).map_err(|e| GinError::io(&blob, e))?;
    let total: usize = manifest.shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    if bytes.len() != total * 8 {
        return Err(GinError::Serde(format!(
            "checkpoint blob holds {} bytes, manifest needs {}",
            bytes.len(),
            total * 8
        )));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut params = Vec::with_capacity(manifest.names.len());
    for (name, shape) in manifest.names.iter().zip(&manifest.shapes) {
        let len = shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(len).collect();
        let arr = ArrayD::from_shape_vec(IxDyn(shape), data).map_err(|e| GinError::Serde(e.to_string()))?;
        params.push(Parameter::new(name.clone(), arr));
    }
    Ok((manifest, params))
}
