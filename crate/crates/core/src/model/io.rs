//! CASS-W1 weight files.
//!
//! Layout: 8-byte magic, little-endian `u32` header length, UTF-8 JSON
//! header, little-endian `f32` payload, trailing CRC32 of the payload.
//! Batch-norm running statistics are stored next to the parameters as
//! `<layer>.running_mean` / `<layer>.running_var` entries.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape};

pub const WEIGHTS_MAGIC: &[u8; 8] = b"CASSW1\0\0";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    parameters: Vec<Entry>,
}

fn entries<T: Real>(model: &Model<T>) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let mut out = Vec::new();
    for p in &model.store.params {
        out.push((
            p.name.clone(),
            p.value.shape().0.to_vec(),
            p.value.data().iter().map(|v| v.f64() as f32).collect(),
        ));
    }
    for s in &model.store.stats {
        let c = s.stats.mean.len();
        out.push((
            format!("{}.running_mean", s.name),
            vec![c],
            s.stats.mean.iter().map(|v| v.f64() as f32).collect(),
        ));
        out.push((
            format!("{}.running_var", s.name),
            vec![c],
            s.stats.var.iter().map(|v| v.f64() as f32).collect(),
        ));
    }
    out
}

/// Serialises a model to CASS-W1 bytes. Values are stored as `f32`.
pub fn write_weights<T: Real>(model: &Model<T>) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut parameters = Vec::new();
    for (name, shape, vals) in entries(model) {
        parameters.push(Entry {
            name,
            shape,
            offset: payload.len(),
        });
        for v in vals {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        version: VERSION,
        config: model.config().clone(),
        parameters,
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::json("weight header", e))?;
    let header_len = u32::try_from(header.len()).map_err(|_| Error::Format("header exceeds 4 GiB".into()))?;
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

pub fn save_weights<T: Real>(model: &Model<T>, path: &Path) -> Result<()> {
    let bytes = write_weights(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses CASS-W1 bytes. Any structural problem is a format error and no
/// model is returned.
pub fn read_weights<T: Real>(bytes: &[u8]) -> Result<Model<T>> {
    let fmt = |m: &str| Error::Format(m.to_string());
    if bytes.len() < 12 {
        return Err(fmt("file shorter than magic + header length"));
    }
    if &bytes[..8] != WEIGHTS_MAGIC {
        return Err(fmt("bad magic"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12usize
        .checked_add(header_len)
        .filter(|&e| e + 4 <= bytes.len())
        .ok_or_else(|| fmt("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&bytes[12..header_end]).map_err(|e| Error::Format(format!("header json: {e}")))?;
    if header.version != VERSION {
        return Err(Error::Format(format!("unknown version {}", header.version)));
    }
    let payload = &bytes[header_end..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());

    let mut model =
        Model::<T>::new(header.config.clone()).map_err(|e| Error::Format(format!("config rejected: {e}")))?;
    let expected = entries(&model);
    if expected.len() != header.parameters.len() {
        return Err(Error::Format(format!(
            "config implies {} tensors, file lists {}",
            expected.len(),
            header.parameters.len()
        )));
    }
    let want_payload: usize = expected.iter().map(|(_, _, v)| v.len() * 4).sum();
    if payload.len() != want_payload {
        return Err(Error::Format(format!(
            "payload is {} bytes, expected {want_payload} (truncated?)",
            payload.len()
        )));
    }
    let computed = crc32fast::hash(payload);
    if computed != stored {
        return Err(Error::Checksum { stored, computed });
    }

    let read = |entry: &Entry, len: usize| -> Result<Vec<T>> {
        let end = entry
            .offset
            .checked_add(len * 4)
            .filter(|&e| e <= payload.len())
            .ok_or_else(|| Error::Format(format!("`{}` runs past payload", entry.name)))?;
        Ok(payload[entry.offset..end]
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect())
    };

    for ((name, shape, vals), entry) in expected.iter().zip(&header.parameters) {
        if &entry.name != name {
            return Err(Error::Format(format!(
                "expected tensor `{name}`, found `{}`",
                entry.name
            )));
        }
        if &entry.shape != shape {
            return Err(Error::Format(format!(
                "`{name}` has shape {:?} in file but {:?} from config",
                entry.shape, shape
            )));
        }
        let data = read(entry, vals.len())?;
        if let Some(p) = model.store.find_mut(name) {
            let s = p.value.shape();
            debug_assert_eq!(s, Shape(shape.as_slice().try_into().unwrap()));
            p.value.data_mut().copy_from_slice(&data);
        } else if let Some(layer) = name.strip_suffix(".running_mean") {
            stats_mut(&mut model, layer)?.mean = data;
        } else if let Some(layer) = name.strip_suffix(".running_var") {
            stats_mut(&mut model, layer)?.var = data;
        } else {
            return Err(Error::Format(format!("unknown tensor `{name}`")));
        }
    }
    Ok(model)
}

fn stats_mut<'a, T: Real>(model: &'a mut Model<T>, layer: &str) -> Result<&'a mut crate::tensor::BnRunning<T>> {
    model
        .store
        .stats
        .iter_mut()
        .find(|s| s.name == layer)
        .map(|s| &mut s.stats)
        .ok_or_else(|| Error::Format(format!("unknown batch-norm layer `{layer}`")))
}

pub fn load_weights<T: Real>(path: &Path) -> Result<Model<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_weights(&bytes)
}
