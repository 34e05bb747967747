//! Versioned binary container for named `f32` tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "THUMBQCW"
//! version      u32
//! header_len   u64
//! header       header_len bytes of JSON
//! payload      concatenated f32 tensors, offsets given in the header
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::{join, Params};

pub const MAGIC: &[u8; 8] = b"THUMBQCW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    pub tensors: BTreeMap<String, Tensor>,
    /// Seed the parameters were initialized from, if known.
    pub seed: Option<u64>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    seed: Option<u64>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    tensors: Vec<HeaderEntry>,
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
    length: usize,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        self.tensors.insert(name.into(), Tensor { shape, data });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Adds every trainable tensor and buffer of `p` under `prefix`.
    pub fn add_params(&mut self, prefix: &str, p: &impl Params) {
        let mut add = |name: &str, shape: &[usize], data: &[f64]| {
            self.tensors.insert(
                join(prefix, name),
                Tensor {
                    shape: shape.to_vec(),
                    data: data.iter().map(|&v| v as f32).collect(),
                },
            );
        };
        p.visit("", &mut add);
        p.visit_buffers("", &mut add);
    }

    /// Copies tensors under `prefix` into `p`. Every tensor `p` expects must be
    /// present with a matching shape.
    pub fn load_params(&self, prefix: &str, p: &mut impl Params) -> Result<()> {
        let mut err = None;
        let mut load = |name: &str, shape: &[usize], data: &mut [f64]| {
            if err.is_some() {
                return;
            }
            let full = join(prefix, name);
            match self.tensors.get(&full) {
                None => err = Some(Error::MissingTensor(full)),
                Some(t) if t.shape != shape => {
                    err = Some(Error::Schema {
                        name: full,
                        expected: shape.to_vec(),
                        found: t.shape.clone(),
                    })
                }
                Some(t) => data.iter_mut().zip(&t.data).for_each(|(d, &s)| *d = s as f64),
            }
        };
        p.visit_mut("", &mut load);
        p.visit_buffers_mut("", &mut load);
        err.map_or(Ok(()), Err)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let entries = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = HeaderEntry {
                    name: name.clone(),
                    dtype: "f32".into(),
                    shape: t.shape.clone(),
                    offset,
                    length: t.data.len(),
                };
                offset += t.data.len() * 4;
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            format_version: FORMAT_VERSION,
            seed: self.seed,
            metadata: self.metadata.clone(),
            tensors: entries,
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = || Error::Format("file is truncated".into());
        if bytes.len() < 8 {
            return Err(truncated());
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(bytes.get(8..12).ok_or_else(truncated)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes.get(12..20).ok_or_else(truncated)?.try_into().unwrap()) as usize;
        let header_end = 20usize.checked_add(header_len).ok_or_else(truncated)?;
        let header: Header = serde_json::from_slice(bytes.get(20..header_end).ok_or_else(truncated)?)
            .map_err(|e| Error::Format(format!("invalid header: {e}")))?;
        if header.format_version != version {
            return Err(Error::Format("header version disagrees with preamble".into()));
        }
        let payload = &bytes[header_end..];
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            if e.dtype != "f32" {
                return Err(Error::Format(format!("tensor `{}` has unsupported dtype {}", e.name, e.dtype)));
            }
            if e.shape.iter().product::<usize>() != e.length {
                return Err(Error::Format(format!("tensor `{}` length disagrees with its shape", e.name)));
            }
            let end = e.offset.checked_add(e.length * 4).ok_or_else(truncated)?;
            let raw = payload.get(e.offset..end).ok_or_else(truncated)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(e.name, Tensor { shape: e.shape, data });
        }
        Ok(Self {
            tensors,
            seed: header.seed,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
