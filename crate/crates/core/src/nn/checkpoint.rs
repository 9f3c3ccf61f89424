//! Checkpoint container: `"ECKP"`, u32 version, u64 header length, a JSON
//! header (metadata plus one entry per network with its config and tensor
//! index), then every tensor's raw little-endian bytes in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::params::{ParamKind, ParamStore};
use super::tensor::{Real, Tensor};

const MAGIC: &[u8; 4] = b"ECKP";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("network {0:?} not present in checkpoint")]
    MissingNetwork(String),
    #[error("layout mismatch in {network}: {detail}")]
    Layout { network: String, detail: String },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct TensorIndex {
    name: String,
    buffer: bool,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkIndex {
    name: String,
    dtype: String,
    config: Value,
    tensors: Vec<TensorIndex>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    meta: Value,
    networks: Vec<NetworkIndex>,
}

/// One serialized network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkRecord {
    pub name: String,
    pub config: Value,
    dtype: String,
    tensors: Vec<(TensorIndex, Vec<u8>)>,
}

impl NetworkRecord {
    pub fn from_store<T: Real>(name: &str, config: Value, store: &ParamStore<T>) -> Self {
        let tensors = store
            .entries()
            .iter()
            .map(|e| {
                let mut bytes = Vec::with_capacity(e.value.len() * T::BYTES);
                for &v in e.value.data() {
                    v.push_le(&mut bytes);
                }
                (
                    TensorIndex { name: e.name.clone(), buffer: e.kind == ParamKind::Buffer, shape: e.value.shape().to_vec() },
                    bytes,
                )
            })
            .collect();
        Self { name: name.to_string(), config, dtype: T::DTYPE.to_string(), tensors }
    }

    /// Overwrites `store` (which must have been built from `self.config`).
    pub fn load_into<T: Real>(&self, store: &mut ParamStore<T>) -> Result<(), CheckpointError> {
        let layout = |detail: String| CheckpointError::Layout { network: self.name.clone(), detail };
        if self.dtype != T::DTYPE {
            return Err(layout(format!("dtype {} vs {}", self.dtype, T::DTYPE)));
        }
        if store.len() != self.tensors.len() {
            return Err(layout(format!("{} tensors vs {}", self.tensors.len(), store.len())));
        }
        let mut values = Vec::with_capacity(self.tensors.len());
        for ((idx, bytes), entry) in self.tensors.iter().zip(store.entries()) {
            if idx.name != entry.name || idx.shape != entry.value.shape() {
                return Err(layout(format!("{} {:?} vs {} {:?}", idx.name, idx.shape, entry.name, entry.value.shape())));
            }
            let data: Vec<T> = bytes.chunks_exact(T::BYTES).map(T::from_le).collect();
            values.push(Tensor::from_vec(&idx.shape, data));
        }
        for (i, v) in values.into_iter().enumerate() {
            *store.get_mut(super::params::ParamId(i)) = v;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: Value,
    pub networks: Vec<NetworkRecord>,
}

impl Checkpoint {
    pub fn new(meta: Value) -> Self {
        Self { meta, networks: Vec::new() }
    }

    pub fn push(&mut self, record: NetworkRecord) {
        self.networks.push(record);
    }

    pub fn network(&self, name: &str) -> Result<&NetworkRecord, CheckpointError> {
        self.networks.iter().find(|n| n.name == name).ok_or_else(|| CheckpointError::MissingNetwork(name.to_string()))
    }

    pub fn has_network(&self, name: &str) -> bool {
        self.networks.iter().any(|n| n.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            meta: self.meta.clone(),
            networks: self
                .networks
                .iter()
                .map(|n| NetworkIndex {
                    name: n.name.clone(),
                    dtype: n.dtype.clone(),
                    config: n.config.clone(),
                    tensors: n.tensors.iter().map(|(i, _)| i.clone()).collect(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for n in &self.networks {
            for (_, bytes) in &n.tensors {
                out.extend_from_slice(bytes);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 16 {
            return Err(CheckpointError::Truncated);
        }
        if &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or(CheckpointError::Truncated)?;
        let header: Header = serde_json::from_slice(body)?;
        let mut pos = 16 + hlen;
        let mut networks = Vec::with_capacity(header.networks.len());
        for n in header.networks {
            let width = match n.dtype.as_str() {
                "f32" => 4,
                "f64" => 8,
                other => {
                    return Err(CheckpointError::Layout { network: n.name, detail: format!("unknown dtype {other}") })
                }
            };
            let mut tensors = Vec::with_capacity(n.tensors.len());
            for idx in n.tensors {
                let len = idx.shape.iter().product::<usize>() * width;
                let chunk = bytes.get(pos..pos + len).ok_or(CheckpointError::Truncated)?;
                pos += len;
                tensors.push((idx, chunk.to_vec()));
            }
            networks.push(NetworkRecord { name: n.name, config: n.config, dtype: n.dtype, tensors });
        }
        if pos != bytes.len() {
            return Err(CheckpointError::Truncated);
        }
        Ok(Self { meta: header.meta, networks })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
