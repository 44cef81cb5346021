//! `.anb` model files.
//!
//! ```text
//! offset 0   8 bytes   magic "ANBMODL1"
//! offset 8   u64 LE    manifest length in bytes
//! offset 16  manifest  UTF-8 JSON: nodes, hyperparameters, parameter names,
//!                      shapes and byte offsets into the blob
//! then       blob      little-endian f32 values, parameters concatenated
//!                      in manifest order
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LayerKind, ModelError, ModelGraph, Node, Param};
use crate::tensor::{checked_numel, Tensor};

pub const MODEL_MAGIC: &[u8; 8] = b"ANBMODL1";
pub const MANIFEST_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic at offset 0: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: String, found: String },
    #[error("truncated header at offset {offset}: need {needed} bytes, {available} available")]
    TruncatedHeader {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("manifest at offset {offset}: {message}")]
    Manifest { offset: usize, message: String },
    #[error("unsupported manifest version {found} (reader supports {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("parameter `{param}` of node {node}: blob offset {found}, expected {expected}")]
    OffsetMismatch {
        node: usize,
        param: String,
        expected: u64,
        found: u64,
    },
    #[error("truncated blob at offset {offset}: manifest needs {expected} bytes, file has {actual}")]
    TruncatedBlob {
        offset: usize,
        expected: u64,
        actual: u64,
    },
    #[error("{extra} trailing bytes after blob ending at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("parameter `{param}` of node {node}: invalid shape {shape:?}")]
    ParamShape {
        node: usize,
        param: String,
        shape: Vec<usize>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    name: String,
    input_shape: Vec<usize>,
    class_count: usize,
    nodes: Vec<NodeEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeEntry {
    #[serde(flatten)]
    op: OpEntry,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    params: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum OpEntry {
    Conv { stride: usize, padding: usize },
    Dense,
    BatchNorm { epsilon: f32 },
    Relu,
    MaxPool { kernel: usize, stride: usize },
    GlobalAvgPool,
    ResidualAdd { source: usize },
    Softmax,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

impl From<LayerKind> for OpEntry {
    fn from(kind: LayerKind) -> Self {
        match kind {
            LayerKind::Conv { stride, padding } => OpEntry::Conv { stride, padding },
            LayerKind::Dense => OpEntry::Dense,
            LayerKind::BatchNorm { epsilon } => OpEntry::BatchNorm { epsilon },
            LayerKind::Relu => OpEntry::Relu,
            LayerKind::MaxPool { kernel, stride } => OpEntry::MaxPool { kernel, stride },
            LayerKind::GlobalAvgPool => OpEntry::GlobalAvgPool,
            LayerKind::ResidualAdd { source } => OpEntry::ResidualAdd { source },
            LayerKind::Softmax => OpEntry::Softmax,
        }
    }
}

impl From<OpEntry> for LayerKind {
    fn from(op: OpEntry) -> Self {
        match op {
            OpEntry::Conv { stride, padding } => LayerKind::Conv { stride, padding },
            OpEntry::Dense => LayerKind::Dense,
            OpEntry::BatchNorm { epsilon } => LayerKind::BatchNorm { epsilon },
            OpEntry::Relu => LayerKind::Relu,
            OpEntry::MaxPool { kernel, stride } => LayerKind::MaxPool { kernel, stride },
            OpEntry::GlobalAvgPool => LayerKind::GlobalAvgPool,
            OpEntry::ResidualAdd { source } => LayerKind::ResidualAdd { source },
            OpEntry::Softmax => LayerKind::Softmax,
        }
    }
}

pub fn encode_model(model: &ModelGraph) -> Vec<u8> {
    let mut offset = 0u64;
    let nodes = model
        .nodes()
        .iter()
        .map(|node| NodeEntry {
            op: node.kind.into(),
            params: node
                .params
                .iter()
                .map(|p| {
                    let entry = ParamEntry {
                        name: p.name.clone(),
                        shape: p.tensor.shape().to_vec(),
                        offset,
                    };
                    offset += 4 * p.tensor.len() as u64;
                    entry
                })
                .collect(),
        })
        .collect();
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        name: model.name().to_string(),
        input_shape: model.input_shape().to_vec(),
        class_count: model.class_count(),
        nodes,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");

    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + offset as usize);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.nodes().iter().flat_map(|n| &n.params) {
        out.extend_from_slice(&p.tensor.to_le_bytes());
    }
    out
}

pub(crate) fn read_u64(bytes: &[u8], offset: usize) -> Result<u64, FormatError> {
    bytes
        .get(offset..offset + 8)
        .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
        .ok_or(FormatError::TruncatedHeader {
            offset,
            needed: 8,
            available: bytes.len().saturating_sub(offset),
        })
}

pub(crate) fn check_magic(bytes: &[u8], magic: &[u8; 8]) -> Result<(), FormatError> {
    let Some(found) = bytes.get(..8) else {
        return Err(FormatError::TruncatedHeader {
            offset: 0,
            needed: 8,
            available: bytes.len(),
        });
    };
    if found != magic {
        return Err(FormatError::MagicMismatch {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    Ok(())
}

pub(crate) fn f32s_from_le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect()
}

/// Parse and validate a model from its file bytes.
pub fn decode_model(bytes: &[u8]) -> Result<ModelGraph, FormatError> {
    check_magic(bytes, MODEL_MAGIC)?;
    let manifest_len = read_u64(bytes, 8)?;
    let available = bytes.len() - HEADER_LEN;
    if manifest_len > available as u64 {
        return Err(FormatError::TruncatedHeader {
            offset: HEADER_LEN,
            needed: usize::try_from(manifest_len).unwrap_or(usize::MAX),
            available,
        });
    }
    let blob_start = HEADER_LEN + manifest_len as usize;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[HEADER_LEN..blob_start]).map_err(|e| FormatError::Manifest {
            offset: HEADER_LEN,
            message: e.to_string(),
        })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: manifest.version,
            supported: MANIFEST_VERSION,
        });
    }

    // Offsets must describe a dense concatenation in manifest order.
    let mut expected_offset = 0u64;
    for (i, node) in manifest.nodes.iter().enumerate() {
        for p in &node.params {
            if p.offset != expected_offset {
                return Err(FormatError::OffsetMismatch {
                    node: i,
                    param: p.name.clone(),
                    expected: expected_offset,
                    found: p.offset,
                });
            }
            let size = checked_numel(&p.shape)
                .filter(|_| !p.shape.is_empty() && !p.shape.contains(&0))
                .and_then(|n| (n as u64).checked_mul(4))
                .ok_or_else(|| FormatError::ParamShape {
                    node: i,
                    param: p.name.clone(),
                    shape: p.shape.clone(),
                })?;
            expected_offset = expected_offset.checked_add(size).ok_or_else(|| FormatError::ParamShape {
                node: i,
                param: p.name.clone(),
                shape: p.shape.clone(),
            })?;
        }
    }
    let blob = &bytes[blob_start..];
    if (blob.len() as u64) < expected_offset {
        return Err(FormatError::TruncatedBlob {
            offset: blob_start,
            expected: expected_offset,
            actual: blob.len() as u64,
        });
    }
    if blob.len() as u64 > expected_offset {
        return Err(FormatError::TrailingBytes {
            offset: blob_start + expected_offset as usize,
            extra: blob.len() - expected_offset as usize,
        });
    }

    let mut nodes = Vec::with_capacity(manifest.nodes.len());
    for (i, entry) in manifest.nodes.into_iter().enumerate() {
        let mut params = Vec::with_capacity(entry.params.len());
        for p in entry.params {
            let start = p.offset as usize;
            let len = 4 * checked_numel(&p.shape).expect("checked above");
            let tensor = Tensor::new(p.shape.clone(), f32s_from_le(&blob[start..start + len])).map_err(|_| {
                FormatError::ParamShape {
                    node: i,
                    param: p.name.clone(),
                    shape: p.shape,
                }
            })?;
            params.push(Param::new(p.name, tensor));
        }
        nodes.push(Node::new(entry.op.into(), params));
    }
    Ok(ModelGraph::new(manifest.name, manifest.input_shape, manifest.class_count, nodes)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelGraph, FormatError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_model(&bytes)
}

/// Write `bytes` to `path` through a sibling temporary file, so a failed
/// write never leaves a partial file at `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let io = |source| FormatError::Io {
        path: path.display().to_string(),
        source,
    };
    let file_name = path
        .file_name()
        .ok_or_else(|| io(std::io::Error::new(std::io::ErrorKind::InvalidInput, "path has no file name")))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(io(e));
    }
    Ok(())
}

pub fn save_model(model: &ModelGraph, path: impl AsRef<Path>) -> Result<(), FormatError> {
    write_atomic(path.as_ref(), &encode_model(model))
}
