//! Checkpoint container: a JSON header followed by named little-endian f32
//! arrays.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, the
//! header JSON, then the array payload. Arrays are stored in name order and
//! each carries a CRC-32 of its bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"VQDCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointKind {
    DegradationModel,
    Vsr,
}

impl std::fmt::Display for CheckpointKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CheckpointKind::DegradationModel => "degradation-model",
            CheckpointKind::Vsr => "vsr",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: u64,
    /// Element count.
    len: u64,
    crc32: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    kind: CheckpointKind,
    stage: u8,
    step: u64,
    config: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub stage: u8,
    pub step: u64,
    pub config: serde_json::Value,
    pub arrays: BTreeMap<String, Tensor<f32>>,
}

impl Checkpoint {
    pub fn new(kind: CheckpointKind, stage: u8, step: u64, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            kind,
            stage,
            step,
            config: serde_json::to_value(config)?,
            arrays: BTreeMap::new(),
        })
    }

    /// Adds every parameter of `params`; a repeated name is an error.
    pub fn add_params(&mut self, params: &ParamStore<f32>) -> Result<()> {
        for (name, t) in params.iter() {
            if self.arrays.insert(name.to_string(), t.clone()).is_some() {
                return Err(Error::Integrity {
                    member: name.to_string(),
                    reason: "array stored twice".into(),
                });
            }
        }
        Ok(())
    }

    /// Arrays whose names start with `prefix`, as a trainable store.
    pub fn params_with_prefix(&self, prefix: &str) -> ParamStore<f32> {
        let mut ps = ParamStore::new();
        for (n, t) in self.arrays.iter().filter(|(n, _)| n.starts_with(prefix)) {
            ps.insert(n.clone(), t.clone());
        }
        ps
    }

    /// Arrays whose names do not start with any of `prefixes`.
    pub fn params_without(&self, prefixes: &[&str]) -> ParamStore<f32> {
        let mut ps = ParamStore::new();
        for (n, t) in &self.arrays {
            if !prefixes.iter().any(|p| n.starts_with(p)) {
                ps.insert(n.clone(), t.clone());
            }
        }
        ps
    }

    pub fn config_as<C: DeserializeOwned>(&self) -> Result<C> {
        Ok(serde_json::from_value(self.config.clone())?)
    }

    pub fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Contract(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }

    pub fn expect_stage(&self, stage: u8) -> Result<()> {
        if self.stage != stage {
            return Err(Error::Stage {
                expected: stage,
                found: self.stage,
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.arrays.len());
        for (name, t) in &self.arrays {
            let offset = payload.len() as u64;
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(ArrayEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                len: t.numel() as u64,
                crc32: crc32fast::hash(&payload[offset as usize..]),
            });
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: self.kind,
            stage: self.stage,
            step: self.step,
            config: self.config.clone(),
            arrays: entries,
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(PREAMBLE + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |member: &str, reason: &str| Error::Integrity {
            member: member.to_string(),
            reason: reason.to_string(),
        };
        if bytes.len() < PREAMBLE {
            return Err(corrupt("preamble", "file shorter than the fixed preamble"));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("preamble", "bad magic; not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let data_start = (PREAMBLE as u64)
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len() as u64)
            .ok_or_else(|| corrupt("header", "truncated header"))? as usize;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..data_start])
            .map_err(|e| corrupt("header", &e.to_string()))?;
        if header.format_version != version {
            return Err(corrupt("header", "format version disagrees with the preamble"));
        }
        let payload = &bytes[data_start..];
        let mut arrays = BTreeMap::new();
        let mut expected_offset = 0u64;
        for e in header.arrays {
            let numel: usize = e.shape.iter().product();
            if numel as u64 != e.len {
                return Err(corrupt(&e.name, "shape does not match element count"));
            }
            if e.offset != expected_offset {
                return Err(corrupt(&e.name, "arrays are not contiguous"));
            }
            let end = e
                .len
                .checked_mul(4)
                .and_then(|n| n.checked_add(e.offset))
                .filter(|&end| end <= payload.len() as u64)
                .ok_or_else(|| corrupt(&e.name, "array data truncated"))?;
            let raw = &payload[e.offset as usize..end as usize];
            if crc32fast::hash(raw) != e.crc32 {
                return Err(corrupt(&e.name, "checksum mismatch"));
            }
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if arrays.insert(e.name.clone(), Tensor::new(e.shape, data)).is_some() {
                return Err(corrupt(&e.name, "array stored twice"));
            }
            expected_offset = end;
        }
        if expected_offset != payload.len() as u64 {
            return Err(corrupt("payload", "trailing bytes after the last array"));
        }
        Ok(Self {
            kind: header.kind,
            stage: header.stage,
            step: header.step,
            config: header.config,
            arrays,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Dotted paths of the leaves where two JSON documents differ.
pub fn json_diff(a: &serde_json::Value, b: &serde_json::Value) -> Vec<String> {
    fn walk(path: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
        use serde_json::Value::Object;
        match (a, b) {
            (Object(x), Object(y)) => {
                let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
                for k in keys {
                    let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                    match (x.get(k), y.get(k)) {
                        (Some(u), Some(v)) => walk(&p, u, v, out),
                        (Some(u), None) => out.push(format!("{p}: {u} != (absent)")),
                        (None, Some(v)) => out.push(format!("{p}: (absent) != {v}")),
                        (None, None) => {}
                    }
                }
            }
            _ if a != b => out.push(format!("{path}: {a} != {b}")),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk("", a, b, &mut out);
    out
}
