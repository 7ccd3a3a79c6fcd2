use std::collections::HashMap;
use std::sync::Arc;

use super::manifest::Manifest;
use super::preprocess::{load_and_preprocess, PreprocessSpec};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor3;

/// Preprocessed network inputs keyed by image id.
#[derive(Clone, Debug, Default)]
pub struct ImageBank {
    images: HashMap<String, Arc<Tensor3>>,
}

/// Images that failed to load, with the reason.
pub type LoadFailures = Vec<(String, String)>;

impl ImageBank {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads every image of `manifest`; failures are returned instead of
    /// aborting.
    pub fn load(manifest: &Manifest, spec: &PreprocessSpec) -> (Self, LoadFailures) {
        let results = par::map_slice(manifest.records(), |r| {
            (r.image_id.clone(), load_and_preprocess(&r.source_path, spec))
        });
        let mut bank = ImageBank::new();
        let mut failures = Vec::new();
        for (id, res) in results {
            match res {
                Ok(t) => {
                    bank.images.insert(id, Arc::new(t));
                }
                Err(e) => failures.push((id, e.to_string())),
            }
        }
        (bank, failures)
    }

    pub fn insert(&mut self, image_id: impl Into<String>, tensor: Tensor3) {
        self.images.insert(image_id.into(), Arc::new(tensor));
    }

    pub fn get(&self, image_id: &str) -> Result<&Tensor3> {
        self.images
            .get(image_id)
            .map(Arc::as_ref)
            .ok_or_else(|| Error::InvalidArgument(format!("image `{image_id}` is not loaded")))
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.images.contains_key(image_id)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn extend(&mut self, other: ImageBank) {
        self.images.extend(other.images);
    }
}
