//! Checkpoints: a JSON manifest plus a raw blob of little-endian f32 parameters.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::geometry::io::{decode_f32le, encode_f32le, read_json, write_atomic, write_json};
use crate::model::{Model, Network};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: usize,
    pub byte_length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub model: ModelConfig,
    pub det_pixels: [usize; 2],
    pub blob: String,
    pub step: usize,
    pub parameters: Vec<TensorEntry>,
}

/// `run/model.json` -> `run/model.bin`.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn save_checkpoint<T: Scalar>(manifest_path: &Path, model: &Model<T>, step: usize) -> Result<()> {
    save_parameters(manifest_path, &model.network, &model.params, step)
}

/// Same as [`save_checkpoint`] for a network and store held separately, as during training.
pub fn save_parameters<T: Scalar>(manifest_path: &Path, network: &Network, params: &ParamStore<T>, step: usize) -> Result<()> {
    let blob = blob_path(manifest_path);
    let mut bytes = Vec::new();
    let mut parameters = Vec::with_capacity(params.len());
    for p in params.iter() {
        let enc = encode_f32le(p.value.data());
        parameters.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            dtype: "f32le".into(),
            byte_offset: bytes.len(),
            byte_length: enc.len(),
        });
        bytes.extend(enc);
    }
    let manifest = CheckpointManifest {
        model: network.config.clone(),
        det_pixels: [network.det_hw.0, network.det_hw.1],
        blob: blob.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        step,
        parameters,
    };
    write_atomic(&blob, &bytes)?;
    write_json(manifest_path, &manifest)
}

/// Rebuilds the architecture from the manifest and fills every parameter by name.
pub fn load_checkpoint<T: Scalar>(manifest_path: &Path) -> Result<(Model<T>, CheckpointManifest)> {
    let manifest: CheckpointManifest = read_json(manifest_path)?;
    manifest.model.validate()?;
    let blob = manifest_path.with_file_name(&manifest.blob);
    let bytes = std::fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    let mut model = Model::<T>::new(&manifest.model, (manifest.det_pixels[0], manifest.det_pixels[1]), 0)?;
    if manifest.parameters.len() != model.params.len() {
        return Err(Error::shape("load_checkpoint", "parameter count", model.params.len(), manifest.parameters.len()));
    }
    for e in &manifest.parameters {
        let id = model
            .params
            .id_of(&e.name)
            .ok_or_else(|| Error::invalid("load_checkpoint", format!("unknown parameter {}", e.name)))?;
        if e.dtype != "f32le" {
            return Err(Error::invalid("load_checkpoint", format!("{}: unsupported dtype {}", e.name, e.dtype)));
        }
        let end = e.byte_offset.checked_add(e.byte_length).filter(|&end| end <= bytes.len());
        let end = end.ok_or_else(|| Error::invalid("load_checkpoint", format!("{}: byte range outside blob", e.name)))?;
        let values = decode_f32le::<T>(&bytes[e.byte_offset..end], &blob)?;
        model.params.set_value(id, Tensor::new(e.shape.clone(), values)?)?;
    }
    Ok((model, manifest))
}
