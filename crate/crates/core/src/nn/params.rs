//! Flat parameter storage.
//!
//! Every learnable tensor of a model lives in one contiguous buffer, so
//! optimizers, gradient accumulation and checkpoints work on plain slices.
//! Gradients use the same layout.

use std::ops::Range;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn span(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    /// Zero-mean normal with standard deviation `sqrt(gain / fan_in)`.
    Kaiming { fan_in: usize, gain: f64 },
    Uniform { bound: f64 },
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut Rng) -> ParamId {
        let entry = ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.data.len(),
        };
        let n = entry.len();
        match init {
            Init::Zeros => self.data.extend(std::iter::repeat_n(0.0, n)),
            Init::Kaiming { fan_in, gain } => {
                let normal = Normal::new(0.0, (gain / fan_in.max(1) as f64).sqrt()).expect("finite std");
                self.data.extend((0..n).map(|_| normal.sample(rng)));
            }
            Init::Uniform { bound } => self.data.extend((0..n).map(|_| rng.random_range(-bound..=bound))),
        }
        self.entries.push(entry);
        ParamId(self.entries.len() - 1)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn span(&self, id: ParamId) -> Range<usize> {
        self.entries[id.0].span()
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[self.span(id)]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let span = self.span(id);
        &mut self.data[span]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }

    /// Flat index ranges of all entries whose name starts with `prefix`.
    pub fn spans_with_prefix(&self, prefix: &str) -> Vec<Range<usize>> {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(ParamEntry::span)
            .collect()
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Replaces the values, keeping the layout. Fails on length mismatch.
    pub fn load_values(&mut self, values: &[f64]) -> bool {
        if values.len() != self.data.len() {
            return false;
        }
        self.data.copy_from_slice(values);
        true
    }

    pub(crate) fn from_parts(entries: Vec<ParamEntry>, data: Vec<f64>) -> Self {
        ParamStore { entries, data }
    }
}

/// Mutable view of one parameter's gradient inside a flat buffer.
pub fn grad_of<'a>(grads: &'a mut [f64], store: &ParamStore, id: ParamId) -> &'a mut [f64] {
    &mut grads[store.span(id)]
}
