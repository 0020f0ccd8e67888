//! Named-tensor checkpoint store and its binary container.
//!
//! Layout: the five magic bytes `MNRT1`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then the raw little-endian row-major `f32` payloads.
//! The header maps each tensor name to `{dtype, shape, offset, role}` where
//! `offset` is the byte offset of the tensor inside the payload section.
//! Model-level metadata lives under the reserved `__metadata__` key.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub const MAGIC: &[u8; 5] = b"MNRT1";
const METADATA_KEY: &str = "__metadata__";
pub const META_DIM: &str = "dim";
pub const META_VOCAB_HASH: &str = "vocab_hash";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorRole {
    Embedding,
    Encoder,
    Head,
}

impl fmt::Display for TensorRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TensorRole::Embedding => "embedding",
            TensorRole::Encoder => "encoder",
            TensorRole::Head => "head",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub role: TensorRole,
    /// Head whose first axis is indexed by token id (an output layer over the
    /// vocabulary). Vocabulary surgery remaps its rows like the embedding.
    pub vocab_rows: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>, role: TensorRole) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Checkpoint(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            role,
            vocab_rows: false,
        })
    }

    pub fn vocab_head(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let mut t = Self::new(shape, data, TensorRole::Head)?;
        t.vocab_rows = true;
        Ok(t)
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Elements per leading-axis row.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let n = self.row_len();
        &self.data[r * n..(r + 1) * n]
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    role: TensorRole,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    vocab_rows: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelCheckpoint {
    tensors: BTreeMap<String, Tensor>,
    metadata: BTreeMap<String, String>,
}

impl ModelCheckpoint {
    pub fn new(dim: usize, vocab_hash: impl Into<String>) -> Self {
        let mut metadata = BTreeMap::new();
        metadata.insert(META_DIM.to_string(), dim.to_string());
        metadata.insert(META_VOCAB_HASH.to_string(), vocab_hash.into());
        Self {
            tensors: BTreeMap::new(),
            metadata,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn dim(&self) -> Result<usize> {
        self.metadata
            .get(META_DIM)
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| Error::Checkpoint("metadata lacks a valid `dim`".into()))
    }

    pub fn vocab_hash(&self) -> Option<&str> {
        self.metadata.get(META_VOCAB_HASH).map(String::as_str)
    }

    /// The single tensor tagged `embedding`.
    pub fn embedding(&self) -> Result<(&str, &Tensor)> {
        let mut found = self
            .tensors
            .iter()
            .filter(|(_, t)| t.role == TensorRole::Embedding);
        let first = found
            .next()
            .ok_or_else(|| Error::Checkpoint("no tensor tagged `embedding`".into()))?;
        if found.next().is_some() {
            return Err(Error::Checkpoint("more than one tensor tagged `embedding`".into()));
        }
        Ok((first.0.as_str(), first.1))
    }

    pub fn vocab_size(&self) -> Result<usize> {
        Ok(self.embedding()?.1.rows())
    }

    /// Checks the structural invariants: one `[V, d]` embedding matching the
    /// metadata dimension, vocabulary heads with `V` rows, finite values.
    pub fn validate(&self) -> Result<()> {
        let (name, emb) = self.embedding()?;
        let dim = self.dim()?;
        if emb.shape.len() != 2 || emb.shape[1] != dim {
            return Err(Error::Checkpoint(format!(
                "embedding `{name}` has shape {:?}, expected [V, {dim}]",
                emb.shape
            )));
        }
        let v = emb.rows();
        for (n, t) in &self.tensors {
            if t.vocab_rows && t.rows() != v {
                return Err(Error::Checkpoint(format!(
                    "vocabulary head `{n}` has {} rows, embedding has {v}",
                    t.rows()
                )));
            }
            if let Some(i) = t.data.iter().position(|x| !x.is_finite()) {
                return Err(Error::Checkpoint(format!(
                    "tensor `{n}` has a non-finite value at index {i}"
                )));
            }
        }
        Ok(())
    }

    /// Fails unless the checkpoint was built for a vocabulary with this hash.
    pub fn check_vocab(&self, fingerprint: &str) -> Result<()> {
        match self.vocab_hash() {
            Some(h) if h == fingerprint => Ok(()),
            Some(h) => Err(Error::Checkpoint(format!(
                "checkpoint vocabulary hash {h} does not match tokenizer {fingerprint}"
            ))),
            None => Err(Error::Checkpoint("checkpoint has no vocabulary hash".into())),
        }
    }

    fn header(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        map.insert(
            METADATA_KEY.to_string(),
            serde_json::to_value(&self.metadata).expect("metadata serializes"),
        );
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            let entry = HeaderEntry {
                dtype: "f32".into(),
                shape: t.shape.clone(),
                offset,
                role: t.role,
                vocab_rows: t.vocab_rows,
            };
            offset += 4 * t.data.len() as u64;
            map.insert(name.clone(), serde_json::to_value(entry).expect("entry serializes"));
        }
        serde_json::Value::Object(map)
    }

    /// Pretty-printed JSON header, as shown by `describe`.
    pub fn describe(&self) -> String {
        serde_json::to_string_pretty(&self.header()).expect("header serializes")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        let payload: usize = self.tensors.values().map(|t| 4 * t.data.len()).sum();
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            out.extend(t.data.iter().flat_map(|v| v.to_le_bytes()));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let mut len = [0u8; 8];
        len.copy_from_slice(&bytes[MAGIC.len()..MAGIC.len() + 8]);
        let header_len = u64::from_le_bytes(len) as usize;
        let start = MAGIC.len() + 8;
        let payload_start = start
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("header length exceeds file size"))?;
        let header: serde_json::Map<String, serde_json::Value> =
            serde_json::from_slice(&bytes[start..payload_start])?;
        let payload = &bytes[payload_start..];

        let mut ckpt = ModelCheckpoint::default();
        for (name, value) in header {
            if name == METADATA_KEY {
                ckpt.metadata = serde_json::from_value(value)?;
                continue;
            }
            let e: HeaderEntry = serde_json::from_value(value)?;
            if e.dtype != "f32" {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has unsupported dtype {}",
                    e.dtype
                )));
            }
            let n: usize = e.shape.iter().product();
            let lo = e.offset as usize;
            let hi = lo
                .checked_add(4 * n)
                .filter(|&h| h <= payload.len())
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` extends past end of file")))?;
            let data = payload[lo..hi]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            ckpt.tensors.insert(
                name,
                Tensor {
                    shape: e.shape,
                    data,
                    role: e.role,
                    vocab_rows: e.vocab_rows,
                },
            );
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Content hash of the serialized checkpoint.
    pub fn fingerprint(&self) -> String {
        io::sha256_hex(&self.to_bytes())
    }
}
