//! Checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"DTJRD1" | u64 header length | header (UTF-8 JSON) | tensor payloads
//! ```
//!
//! The header carries the model configuration, input normalization and an
//! ordered manifest of `{name, dtype, shape, offset, trainable}` entries;
//! `offset` is relative to the first payload byte. Payloads are raw row-major
//! values. Loading a checkpoint whose position table was trained on another
//! grid resizes it onto the requested configuration's grid.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, Normalization};
use super::network::DtJrdModel;
use crate::autodiff::{DType, Parameter, Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"DTJRD1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    normalization: Normalization,
    tensors: Vec<Entry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
    trainable: bool,
}

/// Serializes a model into checkpoint bytes.
pub fn encode_checkpoint<T: Scalar>(model: &DtJrdModel<T>) -> Result<Vec<u8>> {
    let mut entries = Vec::new();
    let mut payload = Vec::new();
    for p in model.parameters() {
        if !p.tensor.is_finite() {
            return Err(Error::format(
                Some(&p.name),
                "refusing to save non-finite values",
            ));
        }
        entries.push(Entry {
            name: p.name.clone(),
            dtype: T::DTYPE,
            shape: p.tensor.shape().to_vec(),
            offset: payload.len() as u64,
            trainable: p.trainable,
        });
        payload.extend_from_slice(&p.tensor.to_le_bytes());
    }
    let header = serde_json::to_vec(&Header {
        config: model.config().clone(),
        normalization: *model.normalization(),
        tensors: entries,
    })
    .map_err(|e| Error::format(None, e.to_string()))?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Writes the checkpoint atomically: the file appears only once complete.
pub fn save_checkpoint<T: Scalar>(model: &DtJrdModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model)?;
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_values<T: Scalar>(bytes: &[u8], dtype: DType) -> Vec<T> {
    match dtype {
        DType::Float32 => bytes
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect(),
        DType::Float64 => bytes
            .chunks_exact(8)
            .map(|c| T::from_f64(f64::from_le_bytes(c.try_into().unwrap())))
            .collect(),
    }
}

/// Parses checkpoint bytes. With `target = None` the stored configuration is
/// used; otherwise the stored position table is resized onto `target`'s grid
/// when the two differ.
pub fn decode_checkpoint<T: Scalar>(
    bytes: &[u8],
    target: Option<&ModelConfig>,
) -> Result<DtJrdModel<T>> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format(None, "missing DTJRD1 magic"));
    }
    let hlen = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
    let body = &bytes[14..];
    if body.len() < hlen {
        return Err(Error::format(None, "truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])
        .map_err(|e| Error::format(None, format!("header: {e}")))?;
    let payload = &body[hlen..];
    header.config.validate()?;

    let mut seen = HashSet::new();
    let mut params = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        if !seen.insert(e.name.as_str()) {
            return Err(Error::format(Some(&e.name), "duplicate parameter name"));
        }
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + n * e.dtype.size_of();
        if end > payload.len() {
            return Err(Error::format(Some(&e.name), "payload truncated"));
        }
        let data = read_values::<T>(&payload[start..end], e.dtype);
        let tensor = Tensor::new(e.shape.clone(), data)
            .map_err(|err| Error::format(Some(&e.name), err.to_string()))?;
        let mut p = Parameter::new(e.name.clone(), tensor);
        p.set_trainable(e.trainable);
        params.push(p);
    }

    let Some(target) = target else {
        return DtJrdModel::from_parameters(header.config, header.normalization, params);
    };
    target.validate()?;
    let expected_rows = 1 + target.num_patches();
    let pos = params
        .iter()
        .position(|p| p.name == "pos_embed")
        .ok_or_else(|| Error::format(Some("pos_embed"), "missing parameter"))?;
    if params[pos].tensor.shape().first() != Some(&expected_rows) {
        let resized = super::network::interpolate_pos_embed(&params[pos].tensor, target.grid())
            .map_err(|e| Error::format(Some("pos_embed"), e.to_string()))?;
        let trainable = params[pos].trainable;
        params[pos] = Parameter::new("pos_embed", resized);
        params[pos].set_trainable(trainable);
    }
    DtJrdModel::from_parameters(target.clone(), header.normalization, params)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<DtJrdModel<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, None)
}

/// Loads into a (possibly different-resolution) configuration.
pub fn load_checkpoint_with_config<T: Scalar>(
    path: impl AsRef<Path>,
    config: &ModelConfig,
) -> Result<DtJrdModel<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, Some(config))
}
