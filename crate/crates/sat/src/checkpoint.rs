//! The SATW weight file: a small JSON tensor directory followed by a
//! 64-byte aligned little-endian `f32` payload. See `docs/FORMAT.md`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use sat_core::weights::Tensor;
use sat_core::{ModelConfig, WeightSet};
use serde::{Deserialize, Serialize};

pub const MAGIC: [u8; 4] = *b"SATW";
pub const VERSION: u32 = 1;
pub const ALIGN: u64 = 64;
/// Magic, version and header length.
pub const PREAMBLE_LEN: u64 = 16;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic {0:?}, expected \"SATW\"")]
    BadMagic([u8; 4]),
    #[error("unknown format version {0}, this reader supports {VERSION}")]
    UnknownVersion(u32),
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("invalid header: {0}")]
    Header(String),
    #[error("tensor {name}: {reason}")]
    Tensor { name: String, reason: String },
    #[error("tensors {a} and {b} overlap")]
    Overlap { a: String, b: String },
    #[error("unexpected tensor {0}")]
    Unexpected(String),
    #[error(transparent)]
    Model(#[from] sat_core::Error),
}

impl CheckpointError {
    fn tensor(name: &str, reason: impl Into<String>) -> Self {
        Self::Tensor {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<u64>,
    /// Relative to the start of the payload.
    pub byte_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Header {
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

fn align_up(x: u64) -> u64 {
    x.div_ceil(ALIGN) * ALIGN
}

/// Serializes named tensors in the given order.
pub fn encode(tensors: &[(String, Tensor)], metadata: &BTreeMap<String, String>) -> Vec<u8> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            dtype: "f32".to_string(),
            shape: t.shape().iter().map(|&s| s as u64).collect(),
            byte_offset: offset,
        });
        offset = align_up(offset + 4 * t.len() as u64);
    }
    let header = serde_json::to_vec(&Header {
        tensors: entries.clone(),
        metadata: metadata.clone(),
    })
    .expect("header serializes");
    let payload_start = align_up(PREAMBLE_LEN + header.len() as u64);

    let mut out = Vec::with_capacity((payload_start + offset) as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.resize(payload_start as usize, 0);
    for ((_, t), e) in tensors.iter().zip(&entries) {
        out.resize((payload_start + e.byte_offset) as usize, 0);
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses and validates a SATW image, returning tensors in file order.
pub fn decode(bytes: &[u8]) -> Result<(Header, Vec<(String, Tensor)>), CheckpointError> {
    let len = bytes.len() as u64;
    if len < PREAMBLE_LEN {
        return Err(CheckpointError::Truncated(format!("{len} bytes, preamble needs {PREAMBLE_LEN}")));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::UnknownVersion(version));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    if header_len > len - PREAMBLE_LEN {
        return Err(CheckpointError::Truncated(format!(
            "header declares {header_len} bytes, {} available",
            len - PREAMBLE_LEN
        )));
    }
    let header_bytes = &bytes[PREAMBLE_LEN as usize..(PREAMBLE_LEN + header_len) as usize];
    let text = std::str::from_utf8(header_bytes).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let header: Header = serde_json::from_str(text).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let payload_start = align_up(PREAMBLE_LEN + header_len);

    let mut seen = HashSet::new();
    let mut spans = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        if !seen.insert(e.name.as_str()) {
            return Err(CheckpointError::tensor(&e.name, "duplicate name"));
        }
        if e.dtype != "f32" {
            return Err(CheckpointError::tensor(&e.name, format!("unsupported dtype {:?}", e.dtype)));
        }
        if e.byte_offset % ALIGN != 0 {
            return Err(CheckpointError::tensor(
                &e.name,
                format!("offset {} is not {ALIGN}-byte aligned", e.byte_offset),
            ));
        }
        let size = e
            .shape
            .iter()
            .try_fold(4u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::tensor(&e.name, "shape overflows"))?;
        let start = payload_start
            .checked_add(e.byte_offset)
            .ok_or_else(|| CheckpointError::tensor(&e.name, "offset overflows"))?;
        let end = start
            .checked_add(size)
            .ok_or_else(|| CheckpointError::tensor(&e.name, "offset overflows"))?;
        if end > len {
            return Err(CheckpointError::Truncated(format!(
                "tensor {} ends at byte {end}, file has {len}",
                e.name
            )));
        }
        spans.push((start, end, e));
    }
    let mut order: Vec<_> = spans.iter().collect();
    order.sort_by_key(|s| (s.0, s.1));
    for w in order.windows(2) {
        if w[0].1 > w[1].0 && w[0].1 > w[0].0 && w[1].1 > w[1].0 {
            return Err(CheckpointError::Overlap {
                a: w[0].2.name.clone(),
                b: w[1].2.name.clone(),
            });
        }
    }

    let mut tensors = Vec::with_capacity(spans.len());
    for (start, end, e) in spans {
        let data = bytes[start as usize..end as usize]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let shape = e.shape.iter().map(|&d| d as usize).collect();
        let t = Tensor::new(shape, data).map_err(|err| CheckpointError::tensor(&e.name, err.to_string()))?;
        tensors.push((e.name.clone(), t));
    }
    Ok((header, tensors))
}

/// Builds a [`WeightSet`] for `cfg` from a decoded SATW image.
pub fn from_bytes(bytes: &[u8], cfg: &ModelConfig) -> Result<WeightSet, CheckpointError> {
    let (_, tensors) = decode(bytes)?;
    let known: HashSet<String> = sat_core::weights::tensor_specs(cfg).into_iter().map(|s| s.name).collect();
    let mut by_name: HashMap<String, Tensor> = tensors.into_iter().collect();
    let w = WeightSet::from_named(cfg, |name| by_name.remove(name))?;
    if let Some(extra) = by_name.keys().filter(|n| !known.contains(*n)).min() {
        return Err(CheckpointError::Unexpected(extra.clone()));
    }
    Ok(w)
}

pub fn to_bytes(w: &WeightSet) -> Vec<u8> {
    let mut meta = BTreeMap::new();
    meta.insert("arch".to_string(), w.config.variant.name().to_string());
    meta.insert("pooling".to_string(), format!("{:?}", w.config.pooling).to_lowercase());
    encode(&w.named_tensors(), &meta)
}

pub fn save(w: &WeightSet, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let io_err = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(&to_bytes(w)).map_err(io_err)?;
    f.sync_all().map_err(io_err)
}

pub fn load(path: impl AsRef<Path>, cfg: &ModelConfig) -> Result<WeightSet, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes, cfg)
}
