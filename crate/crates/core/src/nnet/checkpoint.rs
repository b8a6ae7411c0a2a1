//! Binary checkpoint container.
//!
//! ```text
//! magic     8 bytes  "LUSSLCK\0"
//! version   u32 LE   FORMAT_VERSION
//! hdr_len   u64 LE   length of the JSON header
//! header    JSON     {architecture, metadata, tensors: [{name, shape, offset, len}]}
//! payload   f32 LE   all tensors back to back, offsets counted in values
//! crc32     u32 LE   CRC-32 (IEEE) of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bundle::{init_bundle, ArchitectureConfig, BundleMetadata, ModelBundle};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LUSSLCK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    architecture: ArchitectureConfig,
    metadata: BundleMetadata,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

pub fn encode_checkpoint(bundle: &ModelBundle) -> Result<Vec<u8>> {
    let mut entries = Vec::new();
    let mut payload = Vec::new();
    let mut offset = 0;
    for t in bundle.named_tensors() {
        entries.push(TensorEntry {
            name: t.name,
            shape: t.shape,
            offset,
            len: t.data.len(),
        });
        offset += t.data.len();
        for v in t.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header {
        architecture: bundle.architecture.clone(),
        metadata: bundle.metadata.clone(),
        tensors: entries,
    })?;

    let mut out = Vec::with_capacity(24 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelBundle> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Corrupt("not a checkpoint file (bad magic)".into()));
    }
    if bytes.len() < MAGIC.len() + 4 + 8 + 4 {
        return Err(Error::Corrupt("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let hdr_len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    let hdr_end = 20usize
        .checked_add(hdr_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| Error::Corrupt("header length out of range".into()))?;
    let header: Header = serde_json::from_slice(&body[20..hdr_end])?;
    let payload = &body[hdr_end..];

    let mut bundle = init_bundle(&header.architecture, 0)?;
    bundle.metadata = header.metadata;
    let expected: Vec<(String, Vec<usize>)> = bundle
        .named_tensors()
        .into_iter()
        .map(|t| (t.name, t.shape))
        .collect();
    if expected.len() != header.tensors.len() {
        return Err(Error::Shape(format!(
            "architecture needs {} tensors, checkpoint has {}",
            expected.len(),
            header.tensors.len()
        )));
    }
    for (dst, (entry, (name, shape))) in bundle
        .tensors_mut()
        .into_iter()
        .zip(header.tensors.iter().zip(&expected))
    {
        if &entry.name != name || &entry.shape != shape || entry.len != dst.len() {
            return Err(Error::Shape(format!(
                "tensor {} {:?} does not match expected {} {:?}",
                entry.name, entry.shape, name, shape
            )));
        }
        let start = entry.offset * 4;
        let end = start + entry.len * 4;
        let raw = payload
            .get(start..end)
            .ok_or_else(|| Error::Corrupt(format!("tensor {} outside payload", entry.name)))?;
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    Ok(bundle)
}

pub fn save_checkpoint(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_checkpoint(bundle)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and checks its extractor/projector shape against
/// `expected` (head sets may differ).
pub fn load_checkpoint_expecting(path: impl AsRef<Path>, expected: &ArchitectureConfig) -> Result<ModelBundle> {
    let bundle = load_checkpoint(path)?;
    let a = &bundle.architecture;
    let projector_matches = !expected.with_projector
        || (a.with_projector
            && a.projector_hidden == expected.projector_hidden
            && a.embedding_dim == expected.embedding_dim);
    if a.widths != expected.widths || a.kernel != expected.kernel || a.stride != expected.stride || !projector_matches {
        return Err(Error::Shape(format!(
            "checkpoint architecture (widths {:?}, kernel {}, stride {}) does not match the configured one (widths {:?}, kernel {}, stride {})",
            a.widths, a.kernel, a.stride, expected.widths, expected.kernel, expected.stride
        )));
    }
    Ok(bundle)
}
