//! Named-tensor checkpoint container.
//!
//! Layout: an 8-byte magic `DIFFRECK`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then every tensor's entries as little-endian `f64` in
//! row-major order, in header order. Trainable tensors are followed by their
//! Adam moments (`<name>#adam_m`, `<name>#adam_v`).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DIFFRECK";

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    meta: BTreeMap<String, String>,
    sections: Vec<SectionHeader>,
    extra: Vec<TensorHeader>,
}

#[derive(Serialize, Deserialize)]
struct SectionHeader {
    name: String,
    adam_step: u64,
    tensors: Vec<TensorHeader>,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: [usize; 2],
}

/// In-memory view of a checkpoint file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    /// Free-form string metadata, e.g. the resolved run configuration.
    pub meta: BTreeMap<String, String>,
    /// Trainable parameter stores keyed by section name.
    pub sections: BTreeMap<String, ParamStore>,
    /// Non-trainable tensors.
    pub extra: BTreeMap<String, Array2<f64>>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload: Vec<f64> = Vec::new();
        let mut sections = Vec::new();
        for (name, store) in &self.sections {
            let mut tensors = Vec::new();
            for t in store.tensors() {
                let (r, c) = t.value.dim();
                let (m, v) = t.adam_moments();
                for (suffix, arr) in [("", &t.value), ("#adam_m", m), ("#adam_v", v)] {
                    tensors.push(TensorHeader {
                        name: format!("{}{suffix}", t.name),
                        shape: [r, c],
                    });
                    payload.extend(arr.iter());
                }
            }
            sections.push(SectionHeader {
                name: name.clone(),
                adam_step: store.step(),
                tensors,
            });
        }
        let mut extra = Vec::new();
        for (name, arr) in &self.extra {
            let (r, c) = arr.dim();
            extra.push(TensorHeader {
                name: name.clone(),
                shape: [r, c],
            });
            payload.extend(arr.iter());
        }
        if let Some(bad) = payload.iter().find(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("refusing to save non-finite value {bad}")));
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            meta: self.meta.clone(),
            sections,
            extra,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::input(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + payload.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::input("not a checkpoint file (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16 + hlen)
            .ok_or_else(|| Error::input("truncated checkpoint header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| Error::input(format!("bad checkpoint header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::input(format!(
                "unsupported checkpoint format version {}",
                header.format_version
            )));
        }
        let mut reader = Payload {
            bytes: &bytes[16 + hlen..],
            pos: 0,
        };

        let mut sections = BTreeMap::new();
        for sec in header.sections {
            if sec.tensors.len() % 3 != 0 {
                return Err(Error::input(format!("section {} has incomplete tensor triples", sec.name)));
            }
            let mut store = ParamStore::new();
            for triple in sec.tensors.chunks(3) {
                let value = reader.take(&triple[0])?;
                let m = reader.take(&triple[1])?;
                let v = reader.take(&triple[2])?;
                let id = store.add(triple[0].name.clone(), value);
                store.set_moments(id, m, v)?;
            }
            store.set_step(sec.adam_step);
            sections.insert(sec.name, store);
        }
        let mut extra = BTreeMap::new();
        for t in &header.extra {
            extra.insert(t.name.clone(), reader.take(t)?);
        }
        if reader.pos != reader.bytes.len() {
            return Err(Error::input("trailing bytes after checkpoint payload"));
        }
        Ok(Checkpoint {
            meta: header.meta,
            sections,
            extra,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Payload<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Payload<'_> {
    fn take(&mut self, t: &TensorHeader) -> Result<Array2<f64>> {
        let [r, c] = t.shape;
        let n = r * c;
        let end = self.pos + n * 8;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::input(format!("checkpoint truncated in tensor {}", t.name)))?;
        let data = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        self.pos = end;
        Array2::from_shape_vec((r, c), data).map_err(|e| Error::input(e.to_string()))
    }
}
