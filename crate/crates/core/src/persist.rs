//! Binary and JSON persistence.
//!
//! Feature banks (`ODPCFB01`):
//!
//! ```text
//! magic    8 bytes  "ODPCFB01"
//! version  u32 LE   = 1
//! n_rows   u32 LE
//! dim      u32 LE
//! normal.  u8       0 | 1
//! payload  n_rows * dim f32 LE, row-major
//! crc32    u32 LE   over payload
//! ```
//!
//! Checkpoints (`ODPCCK01`): magic, u32 LE manifest length, UTF-8 JSON
//! manifest, f32 LE tensor blob in manifest order, u32 LE CRC32 over
//! manifest and blob.
//!
//! Every writer goes through [`write_atomic`]: data lands in a temporary
//! file in the target directory which is then renamed over the target.

use std::fs;
use std::io::{ErrorKind, Write};
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::encoders::{EmbeddingMatrix, EmbeddingSource};
use crate::error::{OdpcError, Result};
use crate::scalar::Scalar;

pub const BANK_MAGIC: &[u8; 8] = b"ODPCFB01";
pub const BANK_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ODPCCK01";

const BANK_HEADER_LEN: usize = 8 + 4 + 4 + 4 + 1;

fn format_err(msg: impl Into<String>) -> OdpcError {
    OdpcError::Format(msg.into())
}

pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| OdpcError::Io(e.error))?;
    Ok(())
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    fs::read(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => OdpcError::NotFound(path.to_path_buf()),
        _ => OdpcError::Io(e),
    })
}

/// Pretty-printed JSON with a trailing newline. Key order follows the
/// serialised types (struct field order, `BTreeMap`/`IndexMap` order).
pub fn write_json<S: Serialize + ?Sized>(value: &S, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<D: DeserializeOwned>(path: impl AsRef<Path>) -> Result<D> {
    let bytes = read_file(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn encode_bank<T: Scalar>(matrix: &EmbeddingMatrix<T>) -> Result<Vec<u8>> {
    let (rows, dim) = (matrix.rows(), matrix.dim());
    let rows32 = u32::try_from(rows).map_err(|_| format_err("too many rows"))?;
    let dim32 = u32::try_from(dim).map_err(|_| format_err("dimension too large"))?;
    let mut out = Vec::with_capacity(BANK_HEADER_LEN + rows * dim * 4 + 4);
    out.extend_from_slice(BANK_MAGIC);
    out.extend_from_slice(&BANK_VERSION.to_le_bytes());
    out.extend_from_slice(&rows32.to_le_bytes());
    out.extend_from_slice(&dim32.to_le_bytes());
    out.push(matrix.is_normalized() as u8);
    let payload_start = out.len();
    for v in matrix.values().iter() {
        let f = v.to_f32().ok_or_else(|| format_err("value not representable as f32"))?;
        if !f.is_finite() {
            return Err(OdpcError::InvalidArgument("non-finite value in bank".into()));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[payload_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn decode_bank(bytes: &[u8]) -> Result<EmbeddingMatrix<f32>> {
    if bytes.len() < BANK_HEADER_LEN + 4 {
        return Err(format_err("file shorter than bank header"));
    }
    if &bytes[..8] != BANK_MAGIC {
        return Err(format_err("bad magic, not a feature bank"));
    }
    let version = le_u32(bytes, 8);
    if version != BANK_VERSION {
        return Err(format_err(format!("unsupported bank version {version}")));
    }
    let rows = le_u32(bytes, 12) as usize;
    let dim = le_u32(bytes, 16) as usize;
    let normalized = match bytes[20] {
        0 => false,
        1 => true,
        b => return Err(format_err(format!("invalid normalized flag {b}"))),
    };
    let payload_len =
        rows.checked_mul(dim).and_then(|n| n.checked_mul(4)).ok_or_else(|| format_err("declared size overflows"))?;
    if bytes.len() != BANK_HEADER_LEN + payload_len + 4 {
        return Err(format_err(format!("declared {rows}x{dim} payload does not match file length {}", bytes.len())));
    }
    let payload = &bytes[BANK_HEADER_LEN..BANK_HEADER_LEN + payload_len];
    let stored = le_u32(bytes, BANK_HEADER_LEN + payload_len);
    if crc32fast::hash(payload) != stored {
        return Err(OdpcError::Corruption("feature bank CRC mismatch".into()));
    }
    let values: Vec<f32> =
        payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk"))).collect();
    let values = Array2::from_shape_vec((rows, dim), values).map_err(|e| format_err(e.to_string()))?;
    EmbeddingMatrix::new(values, normalized, EmbeddingSource::Imported)
        .map_err(|e| format_err(format!("stored matrix violates invariants: {e}")))
}

pub fn write_bank<T: Scalar>(matrix: &EmbeddingMatrix<T>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_bank(matrix)?)
}

pub fn read_bank(path: impl AsRef<Path>) -> Result<EmbeddingMatrix<f32>> {
    decode_bank(&read_file(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_id_classes: usize,
    pub num_peer_outputs: usize,
    pub seed: u64,
    pub epoch: usize,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint(manifest: &CheckpointManifest, blob: &[f32]) -> Result<Vec<u8>> {
    let expected: usize = manifest.tensors.iter().map(TensorEntry::len).sum();
    if expected != blob.len() {
        return Err(format_err(format!("manifest describes {expected} values, blob holds {}", blob.len())));
    }
    let json = serde_json::to_vec(manifest)?;
    let json_len = u32::try_from(json.len()).map_err(|_| format_err("manifest too large"))?;
    let mut out = Vec::with_capacity(8 + 4 + json.len() + blob.len() * 4 + 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&json_len.to_le_bytes());
    out.extend_from_slice(&json);
    for v in blob {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[12..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointManifest, Vec<f32>)> {
    if bytes.len() < 8 + 4 + 4 {
        return Err(format_err("file shorter than checkpoint header"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(format_err("bad magic, not a checkpoint"));
    }
    let json_len = le_u32(bytes, 8) as usize;
    let body_end = bytes.len() - 4;
    if 12 + json_len > body_end {
        return Err(format_err("manifest length exceeds file"));
    }
    let stored = le_u32(bytes, body_end);
    if crc32fast::hash(&bytes[12..body_end]) != stored {
        return Err(OdpcError::Corruption("checkpoint CRC mismatch".into()));
    }
    let manifest: CheckpointManifest =
        serde_json::from_slice(&bytes[12..12 + json_len]).map_err(|e| format_err(format!("bad manifest: {e}")))?;
    let blob_bytes = &bytes[12 + json_len..body_end];
    let expected: usize = manifest.tensors.iter().map(TensorEntry::len).sum();
    if blob_bytes.len() != expected * 4 {
        return Err(format_err(format!("manifest describes {expected} values, blob holds {} bytes", blob_bytes.len())));
    }
    let blob = blob_bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk"))).collect();
    Ok((manifest, blob))
}
