//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "RBCKPT\0\x01"
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON (see `CheckpointHeader`)
//! payload      parameter_count × f64
//! ```
//!
//! The header lists every named tensor with its shape and offset into the
//! payload, the model spec needed to rebuild the network, the input
//! resolution, the parameter count and the training step at creation.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ParamEntry, ParamStore};
use super::{Model, ModelSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RBCKPT\0\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub spec_id: String,
    pub model: ModelSpec,
    pub resolution: usize,
    pub parameter_count: usize,
    pub creation_step: u64,
    pub tensors: Vec<ParamEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(model: &ModelSpec, params: &ParamStore, creation_step: u64) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                spec_id: model.spec_id(),
                model: model.clone(),
                resolution: model.input_resolution(),
                parameter_count: params.len(),
                creation_step,
                tensors: params.entries().to_vec(),
            },
            params: params.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header).map_err(|e| Error::format("checkpoint", e.to_string()))?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.params.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::format("checkpoint", m.to_owned());
        let mut magic = [0u8; 8];
        bytes.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut len = [0u8; 8];
        bytes.read_exact(&mut len).map_err(|_| bad("truncated header length"))?;
        let len = u64::from_le_bytes(len) as usize;
        if bytes.len() < len {
            return Err(bad("truncated header"));
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[..len]).map_err(|e| Error::format("checkpoint", e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {}", header.format_version)));
        }
        let payload = &bytes[len..];
        if payload.len() != 8 * header.parameter_count {
            return Err(bad("payload size does not match parameter count"));
        }
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let covered: usize = header.tensors.iter().map(ParamEntry::len).sum();
        if covered != data.len() {
            return Err(bad("tensor table does not cover the payload"));
        }
        let params = ParamStore::from_parts(header.tensors.clone(), data);
        Ok(Checkpoint { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the network and checks that the stored tensor table matches
    /// the layout the spec produces.
    pub fn into_model(self) -> Result<(Model, ParamStore)> {
        let (model, fresh) = Model::build(&self.header.model, 0)?;
        if fresh.entries() != self.params.entries() {
            return Err(Error::format("checkpoint", "tensor table does not match the model spec"));
        }
        Ok((model, self.params))
    }
}
