//! Named-tensor container.
//!
//! Little-endian layout: a `u64` header length, a UTF-8 JSON header mapping
//! each tensor name to `{"dtype": "f64"|"f32", "shape": [...],
//! "data_offsets": [begin, end]}`, then the concatenated raw buffers.
//! Offsets are relative to the first byte after the header. Matrices are
//! stored row-major in `[output, input]` orientation. An optional
//! `__metadata__` entry maps strings to strings.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const METADATA_KEY: &str = "__metadata__";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryHeader {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub data_offsets: [usize; 2],
}

/// A loaded container: headers plus the raw data section.
#[derive(Clone, Debug)]
pub struct Container {
    entries: BTreeMap<String, EntryHeader>,
    metadata: BTreeMap<String, String>,
    data: Vec<u8>,
}

fn width_of(dtype: &str) -> Result<usize> {
    match dtype {
        "f64" => Ok(8),
        "f32" => Ok(4),
        other => Err(Error::Import(format!("unsupported dtype `{other}`"))),
    }
}

impl Container {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Import("container shorter than its length prefix".into()));
        }
        let n = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let header_end = 8usize
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Import(format!("header length {n} exceeds file size")))?;
        let header: BTreeMap<String, Value> = serde_json::from_slice(&bytes[8..header_end])?;
        let data = bytes[header_end..].to_vec();
        let mut entries = BTreeMap::new();
        let mut metadata = BTreeMap::new();
        for (name, v) in header {
            if name == METADATA_KEY {
                metadata = serde_json::from_value(v)?;
                continue;
            }
            let e: EntryHeader = serde_json::from_value(v)
                .map_err(|err| Error::Import(format!("tensor `{name}`: bad header entry: {err}")))?;
            let [begin, end] = e.data_offsets;
            let numel: usize = e.shape.iter().product();
            if begin > end || end > data.len() || end - begin != numel * width_of(&e.dtype)? {
                return Err(Error::Import(format!(
                    "tensor `{name}`: offsets {:?} inconsistent with shape {:?} ({})",
                    e.data_offsets, e.shape, e.dtype
                )));
            }
            entries.insert(name, e);
        }
        Ok(Self {
            entries,
            metadata,
            data,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn header(&self, name: &str) -> Option<&EntryHeader> {
        self.entries.get(name)
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Decodes a tensor, converting to `T` if stored at another width.
    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let e = self
            .entries
            .get(name)
            .ok_or_else(|| Error::Import(format!("missing tensor `{name}`")))?;
        let [begin, end] = e.data_offsets;
        let raw = &self.data[begin..end];
        let values: Vec<T> = match e.dtype.as_str() {
            "f64" => raw.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
            "f32" => raw.chunks_exact(4).map(|c| T::of(f32::read_le(c) as f64)).collect(),
            other => return Err(Error::Import(format!("unsupported dtype `{other}`"))),
        };
        Tensor::new(&e.shape, values)
    }

    /// Decodes a tensor and checks its shape.
    pub fn expect<T: Scalar>(&self, name: &str, shape: &[usize]) -> Result<Tensor<T>> {
        let e = self
            .entries
            .get(name)
            .ok_or_else(|| Error::Import(format!("missing tensor `{name}`")))?;
        if e.shape != shape {
            return Err(Error::Import(format!(
                "tensor `{name}`: expected shape {shape:?}, found {:?}",
                e.shape
            )));
        }
        self.tensor(name)
    }
}

/// Builds a container in memory; entries are written in name order.
#[derive(Default)]
pub struct ContainerWriter {
    tensors: BTreeMap<String, (String, Vec<usize>, Vec<u8>)>,
    metadata: BTreeMap<String, String>,
}

impl ContainerWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) -> &mut Self {
        let mut bytes = Vec::with_capacity(t.numel() * T::WIDTH);
        for &v in t.data() {
            v.write_le(&mut bytes);
        }
        self.tensors
            .insert(name.into(), (T::DTYPE.to_string(), t.shape().to_vec(), bytes));
        self
    }

    pub fn metadata(&mut self, key: impl Into<String>, value: impl Into<String>) -> &mut Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = BTreeMap::new();
        let mut at = 0;
        for (name, (dtype, shape, bytes)) in &self.tensors {
            let entry = EntryHeader {
                dtype: dtype.clone(),
                shape: shape.clone(),
                data_offsets: [at, at + bytes.len()],
            };
            header.insert(name.clone(), serde_json::to_value(entry)?);
            at += bytes.len();
        }
        if !self.metadata.is_empty() {
            header.insert(METADATA_KEY.to_string(), serde_json::to_value(&self.metadata)?);
        }
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(8 + json.len() + at);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, bytes) in self.tensors.values() {
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }
}
