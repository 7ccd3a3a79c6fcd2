//! Gallery index of embeddings and its binary file format.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic       4 bytes  "RBIX"
//! version     u32
//! model_id    u32 length + UTF-8
//! resolution  u32
//! count       u64
//! records     count × 128 × f64
//! ids         count × (u32 length + UTF-8 image id, u32 length + UTF-8 patient id)
//! ```

use std::collections::HashSet;
use std::path::Path;

use crate::catalog::{load_and_preprocess, Manifest, PreprocessSpec};
use crate::error::{Error, Result};
use crate::metrics::GalleryEntry;
use crate::nn::{Embedding, EMBEDDING_DIM};
use crate::par;
use crate::tensor::Tensor3;

const MAGIC: &[u8; 4] = b"RBIX";
pub const INDEX_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct GalleryIndex {
    pub model_id: String,
    pub resolution: u32,
    entries: Vec<GalleryEntry>,
}

impl GalleryIndex {
    pub fn new(model_id: impl Into<String>, resolution: u32, entries: Vec<GalleryEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate image id `{}` in index", e.image_id)));
            }
        }
        Ok(GalleryIndex {
            model_id: model_id.into(),
            resolution,
            entries,
        })
    }

    pub fn entries(&self) -> &[GalleryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, image_id: &str) -> Option<&GalleryEntry> {
        self.entries.iter().find(|e| e.image_id == image_id)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.entries.len() * (EMBEDDING_DIM * 8 + 32));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        put_str(&mut out, &self.model_id);
        out.extend_from_slice(&self.resolution.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            for v in e.embedding.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for e in &self.entries {
            put_str(&mut out, &e.image_id);
            put_str(&mut out, &e.patient_id);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("index", "bad magic"));
        }
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(Error::format("index", format!("unsupported version {version}")));
        }
        let model_id = r.string()?;
        let resolution = r.u32()?;
        let count = usize::try_from(r.u64()?).map_err(|_| Error::format("index", "count overflow"))?;
        let need = count
            .checked_mul(EMBEDDING_DIM * 8)
            .ok_or_else(|| Error::format("index", "count overflow"))?;
        let body = r.take(need)?;
        let vectors: Vec<Vec<f64>> = body
            .chunks_exact(EMBEDDING_DIM * 8)
            .map(|rec| {
                rec.chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                    .collect()
            })
            .collect();
        let mut entries = Vec::with_capacity(count);
        for v in vectors {
            let image_id = r.string()?;
            let patient_id = r.string()?;
            entries.push(GalleryEntry {
                image_id,
                patient_id,
                embedding: Embedding::new(v)?,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::format("index", "trailing bytes"));
        }
        GalleryIndex::new(model_id, resolution, entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("index", "truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format("index", "id is not UTF-8"))
    }
}

/// Images that could not be embedded, with the reason.
pub type IndexFailures = Vec<(String, String)>;

/// Embeds every image of `manifest` with `embed_fn`. Unreadable images
/// are reported and left out.
pub fn build_index<F>(
    manifest: &Manifest,
    embed_fn: F,
    spec: &PreprocessSpec,
    model_id: &str,
) -> Result<(GalleryIndex, IndexFailures)>
where
    F: Fn(&Tensor3) -> Result<Embedding> + Sync + Send,
{
    let records = manifest.records();
    let results = par::map_range(records.len(), |i| {
        load_and_preprocess(&records[i].source_path, spec).and_then(|x| embed_fn(&x))
    });
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (r, emb) in records.iter().zip(results) {
        match emb {
            Ok(embedding) => entries.push(GalleryEntry {
                image_id: r.image_id.clone(),
                patient_id: r.patient_id.clone(),
                embedding,
            }),
            Err(e) => failures.push((r.image_id.clone(), e.to_string())),
        }
    }
    Ok((GalleryIndex::new(model_id, spec.target_resolution as u32, entries)?, failures))
}
