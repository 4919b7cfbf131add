//! Directory checkpoints: a JSON manifest plus one raw little-endian float32
//! file per parameter tensor.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backbone::{build_backbone, Backbone, BackboneSpec, Layer, PretrainObjective};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// A flat tensor with its name and shape, the unit of checkpoint exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        let t = Self { name: name.into(), shape, data };
        assert_eq!(t.shape.iter().product::<usize>(), t.data.len(), "{}", t.name);
        t
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    version: u32,
    kind: String,
    meta: Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

/// Writes a checkpoint directory. `meta` carries kind-specific fields.
pub fn save_tensors(dir: &Path, kind: &str, meta: Value, tensors: &[NamedTensor]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(tensors.len());
    for t in tensors {
        let file = format!("{}.bin", t.name);
        let mut bytes = Vec::with_capacity(t.data.len() * 4);
        for &v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join(&file), &bytes)?;
        entries.push(TensorEntry { name: t.name.clone(), shape: t.shape.clone(), file });
    }
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        kind: kind.into(),
        meta,
        tensors: entries,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Reads a checkpoint directory back. Checks the expected kind.
pub fn load_tensors(dir: &Path, kind: &str) -> Result<(Value, Vec<NamedTensor>)> {
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported checkpoint version {}",
            manifest.version
        )));
    }
    if manifest.kind != kind {
        return Err(Error::InvalidInput(format!(
            "checkpoint kind {:?}, expected {kind:?}",
            manifest.kind
        )));
    }
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in manifest.tensors {
        let bytes = fs::read(dir.join(&e.file))?;
        let expect = e.shape.iter().product::<usize>() * 4;
        if bytes.len() != expect {
            return Err(Error::InvalidInput(format!(
                "tensor {} has {} bytes, expected {expect}",
                e.name,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(NamedTensor { name: e.name, shape: e.shape, data });
    }
    Ok((manifest.meta, tensors))
}

/// Indexes tensors by name for import.
pub fn tensor_map(tensors: Vec<NamedTensor>) -> BTreeMap<String, NamedTensor> {
    tensors.into_iter().map(|t| (t.name.clone(), t)).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct BackboneMeta {
    spec: BackboneSpec,
    frozen: bool,
    frozen_checksum: Option<String>,
    checksum: String,
    objective: Option<PretrainObjective>,
    compression_layers: Vec<Layer>,
}

pub fn save_backbone(dir: &Path, backbone: &Backbone) -> Result<()> {
    let meta = BackboneMeta {
        spec: backbone.spec.clone(),
        frozen: backbone.frozen,
        frozen_checksum: backbone.frozen_checksum.clone(),
        checksum: backbone.checksum(),
        objective: backbone.objective,
        compression_layers: Layer::ALL
            .into_iter()
            .filter(|&l| backbone.has_compression(l))
            .collect(),
    };
    save_tensors(dir, "backbone", serde_json::to_value(&meta)?, &backbone.export_tensors())
}

pub fn load_backbone(dir: &Path) -> Result<Backbone> {
    let (meta, tensors) = load_tensors(dir, "backbone")?;
    let meta: BackboneMeta = serde_json::from_value(meta)?;
    let mut backbone = build_backbone(&meta.spec)?;
    for layer in meta.compression_layers {
        backbone.attach_compression(layer)?;
    }
    backbone.import_tensors(&tensor_map(tensors))?;
    backbone.objective = meta.objective;
    if backbone.checksum() != meta.checksum {
        return Err(Error::InvalidInput("backbone checksum mismatch after load".into()));
    }
    if meta.frozen {
        backbone.freeze();
        if backbone.frozen_checksum != meta.frozen_checksum {
            return Err(Error::InvalidInput("frozen checksum mismatch after load".into()));
        }
    }
    Ok(backbone)
}
