//! Labeled pair construction.
//!
//! Verification training mines pairs offline: every within-patient
//! combination is a positive, negatives are drawn uniformly across
//! patients, either once (FTS) or afresh every epoch (RNP). Retrieval
//! training mines online: all pairs inside a batch plus every pairing of a
//! batch item with the cross-batch memory.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::catalog::Manifest;
use crate::error::{Error, Result};
use crate::nn::embedding::Embedding;
use crate::rng::{rng_for, stream};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairSample {
    pub image_id_1: String,
    pub image_id_2: String,
    /// 1 = same patient, 0 = different patients.
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<PairSample>,
    pub source_split: String,
    pub balanced: bool,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positives(&self) -> impl Iterator<Item = &PairSample> {
        self.pairs.iter().filter(|p| p.label == 1)
    }

    pub fn negatives(&self) -> impl Iterator<Item = &PairSample> {
        self.pairs.iter().filter(|p| p.label == 0)
    }

    /// Writes `image_id_1,image_id_2,label` with a header row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["image_id_1", "image_id_2", "label"])?;
        for p in &self.pairs {
            w.write_record([p.image_id_1.as_str(), p.image_id_2.as_str(), if p.label == 1 { "1" } else { "0" }])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, source_split: &str) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut pairs = Vec::new();
        for (i, row) in r.records().enumerate() {
            let row = row?;
            let bad = || Error::format("pair file", format!("row {}", i + 1));
            let label = match row.get(2).map(str::trim) {
                Some("1") => 1,
                Some("0") => 0,
                _ => return Err(bad()),
            };
            pairs.push(PairSample {
                image_id_1: row.get(0).ok_or_else(bad)?.to_owned(),
                image_id_2: row.get(1).ok_or_else(bad)?.to_owned(),
                label,
            });
        }
        let pos = pairs.iter().filter(|p| p.label == 1).count();
        Ok(PairSet {
            balanced: 2 * pos == pairs.len(),
            pairs,
            source_split: source_split.to_owned(),
        })
    }

    /// Checks both pair invariants against `manifest`, returning the
    /// offending pairs.
    pub fn mislabeled<'a>(&'a self, manifest: &Manifest) -> Vec<&'a PairSample> {
        let patient = manifest.patient_of();
        self.pairs
            .iter()
            .filter(|p| {
                let a = patient.get(p.image_id_1.as_str());
                let b = patient.get(p.image_id_2.as_str());
                match (a, b) {
                    (Some(a), Some(b)) => p.image_id_1 == p.image_id_2 || (a == b) != (p.label == 1),
                    _ => true,
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MiningMode {
    /// Fixed training set: negatives drawn once.
    FTS,
    /// Randomized negative pairs: negatives redrawn every epoch.
    RNP,
}

impl fmt::Display for MiningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for MiningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FTS" => Ok(MiningMode::FTS),
            "RNP" => Ok(MiningMode::RNP),
            other => Err(Error::InvalidArgument(format!("unknown mining mode `{other}` (expected FTS or RNP)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub mode: MiningMode,
    /// Total pairs N_s, half positive and half negative.
    pub target_size: usize,
    pub seed: u64,
}

/// All within-patient pairs, patients in id order, images in record order.
pub fn mine_positive_pairs(manifest: &Manifest) -> PairSet {
    let records = manifest.records();
    let mut pairs = Vec::new();
    for positions in manifest.patient_index().values() {
        for (a, &i) in positions.iter().enumerate() {
            for &j in &positions[a + 1..] {
                pairs.push(PairSample {
                    image_id_1: records[i].image_id.clone(),
                    image_id_2: records[j].image_id.clone(),
                    label: 1,
                });
            }
        }
    }
    PairSet {
        pairs,
        source_split: String::new(),
        balanced: false,
    }
}

fn choose2(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

/// Number of unordered image pairs spanning two different patients.
pub fn cross_patient_pair_count(manifest: &Manifest) -> usize {
    choose2(manifest.len()) - manifest.patient_index().values().map(|v| choose2(v.len())).sum::<usize>()
}

/// `count` distinct cross-patient pairs, uniform over images.
pub fn sample_negative_pairs(manifest: &Manifest, count: usize, seed: u64) -> Result<PairSet> {
    let empty = PairSet {
        pairs: Vec::new(),
        source_split: String::new(),
        balanced: false,
    };
    if count == 0 {
        return Ok(empty);
    }
    if manifest.patient_count() < 2 {
        return Err(Error::Mining("negative pairs need at least two patients".into()));
    }
    let available = cross_patient_pair_count(manifest);
    if count > available {
        return Err(Error::Mining(format!(
            "requested {count} negative pairs but only {available} cross-patient pairs exist"
        )));
    }
    let records = manifest.records();
    let mut rng = rng_for(seed, &[stream::NEGATIVES]);
    let mut chosen: Vec<(usize, usize)> = Vec::with_capacity(count);
    if count * 2 > available {
        // Dense request: enumerate, then take a uniform subset.
        let mut all = Vec::with_capacity(available);
        for i in 0..records.len() {
            for j in i + 1..records.len() {
                if records[i].patient_id != records[j].patient_id {
                    all.push((i, j));
                }
            }
        }
        all.shuffle(&mut rng);
        all.truncate(count);
        chosen = all;
    } else {
        let mut seen = HashSet::with_capacity(count);
        while chosen.len() < count {
            let i = rng.random_range(0..records.len());
            let j = rng.random_range(0..records.len());
            if records[i].patient_id == records[j].patient_id {
                continue;
            }
            if seen.insert((i.min(j), i.max(j))) {
                chosen.push((i, j));
            }
        }
    }
    Ok(PairSet {
        pairs: chosen
            .into_iter()
            .map(|(i, j)| PairSample {
                image_id_1: records[i].image_id.clone(),
                image_id_2: records[j].image_id.clone(),
                label: 0,
            })
            .collect(),
        ..empty
    })
}

/// Balanced training pairs for one epoch.
///
/// Positives are a fixed seeded subset (all of them when `target_size`
/// equals twice the positive count). FTS draws negatives from the seed
/// alone; RNP from the seed and the epoch.
pub fn build_training_pairs(manifest: &Manifest, config: &MiningConfig, epoch: u64) -> Result<PairSet> {
    if config.target_size % 2 != 0 {
        return Err(Error::Mining(format!("target size {} must be even", config.target_size)));
    }
    let half = config.target_size / 2;
    let mut positives = mine_positive_pairs(manifest).pairs;
    if half > positives.len() {
        return Err(Error::Mining(format!(
            "target size {} needs {half} positive pairs, only {} available",
            config.target_size,
            positives.len()
        )));
    }
    if half < positives.len() {
        positives.shuffle(&mut rng_for(config.seed, &[stream::POSITIVE_SUBSET]));
        positives.truncate(half);
    }
    let (neg_seed, shuffle_tags) = match config.mode {
        MiningMode::FTS => (rng_for(config.seed, &[]).random(), vec![stream::PAIR_SHUFFLE]),
        MiningMode::RNP => (
            rng_for(config.seed, &[epoch]).random(),
            vec![stream::PAIR_SHUFFLE, epoch],
        ),
    };
    let negatives = sample_negative_pairs(manifest, half, neg_seed)?;
    let mut pairs = positives;
    pairs.extend(negatives.pairs);
    pairs.shuffle(&mut rng_for(config.seed, &shuffle_tags));
    Ok(PairSet {
        pairs,
        source_split: String::new(),
        balanced: true,
    })
}

/// All positives of `manifest` plus as many seeded negatives, for
/// validation and testing.
pub fn balanced_eval_pairs(manifest: &Manifest, seed: u64) -> Result<PairSet> {
    let positives = mine_positive_pairs(manifest).pairs.len();
    build_training_pairs(
        manifest,
        &MiningConfig {
            mode: MiningMode::FTS,
            target_size: 2 * positives,
            seed,
        },
        0,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryEntry {
    pub embedding: Embedding,
    pub patient_id: String,
    pub step: u64,
}

/// FIFO store of detached embeddings from recent batches.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossBatchMemory {
    capacity: usize,
    entries: VecDeque<MemoryEntry>,
}

impl CrossBatchMemory {
    pub fn new(capacity: usize) -> Self {
        CrossBatchMemory {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = &MemoryEntry> {
        self.entries.iter()
    }

    pub fn get(&self, i: usize) -> Option<&MemoryEntry> {
        self.entries.get(i)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Appends a batch recorded at `step`, evicting the oldest entries
    /// beyond capacity. Steps must not go backwards.
    pub fn push<I>(&mut self, batch: I, step: u64)
    where
        I: IntoIterator<Item = (Embedding, String)>,
    {
        if let Some(last) = self.entries.back() {
            assert!(step >= last.step, "memory steps must be monotone ({step} < {})", last.step);
        }
        for (embedding, patient_id) in batch {
            if self.capacity == 0 {
                continue;
            }
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back(MemoryEntry {
                embedding,
                patient_id,
                step,
            });
        }
    }
}

/// Second member of a mined pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partner {
    Batch(usize),
    Memory(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MinedPair {
    /// Index into the batch.
    pub anchor: usize,
    pub partner: Partner,
    pub same_patient: bool,
}

/// Every unordered pair within `batch` followed by every (batch item,
/// memory entry) pair. Emits `C(b, 2) + b·|memory|` pairs.
pub fn enumerate_batch_pairs(batch: &[(Embedding, String)], memory: &CrossBatchMemory) -> Vec<MinedPair> {
    let b = batch.len();
    let mut out = Vec::with_capacity(choose2(b) + b * memory.len());
    for i in 0..b {
        for j in i + 1..b {
            out.push(MinedPair {
                anchor: i,
                partner: Partner::Batch(j),
                same_patient: batch[i].1 == batch[j].1,
            });
        }
    }
    for (i, (_, pid)) in batch.iter().enumerate() {
        for (k, entry) in memory.entries().enumerate() {
            out.push(MinedPair {
                anchor: i,
                partner: Partner::Memory(k),
                same_patient: *pid == entry.patient_id,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Gender, ImageRecord, View};
    use crate::nn::embedding::EMBEDDING_DIM;
    use std::collections::BTreeSet;
    use std::path::PathBuf;

    pub(crate) fn manifest(counts: &[usize]) -> Manifest {
        let mut records = Vec::new();
        for (p, &k) in counts.iter().enumerate() {
            for f in 0..k {
                records.push(ImageRecord {
                    image_id: format!("{p:05}_{f:03}.png"),
                    patient_id: format!("{p:05}"),
                    follow_up_index: f as u32,
                    age_years: Some(30),
                    gender: Gender::M,
                    view: View::PA,
                    finding_labels: BTreeSet::from(["No Finding".to_owned()]),
                    source_path: PathBuf::new(),
                });
            }
        }
        Manifest::new(records).unwrap()
    }

    fn emb(v: f64) -> Embedding {
        Embedding::new(vec![v; EMBEDDING_DIM]).unwrap()
    }

    #[test]
    fn positive_counts() {
        assert_eq!(mine_positive_pairs(&manifest(&[1])).len(), 0);
        let m = manifest(&[3, 2, 1]);
        let p = mine_positive_pairs(&m);
        assert_eq!(p.len(), 4);
        assert!(p.mislabeled(&m).is_empty());
    }

    #[test]
    fn negatives_are_cross_patient_and_distinct() {
        let m = manifest(&[4, 3, 5, 2, 6]);
        let n = sample_negative_pairs(&m, 50, 1).unwrap();
        assert_eq!(n.len(), 50);
        assert!(n.mislabeled(&m).is_empty());
        let keys: HashSet<(String, String)> = n
            .pairs
            .iter()
            .map(|p| {
                let (a, b) = (p.image_id_1.clone(), p.image_id_2.clone());
                if a < b { (a, b) } else { (b, a) }
            })
            .collect();
        assert_eq!(keys.len(), 50);
        assert_eq!(sample_negative_pairs(&m, 50, 1).unwrap(), n);
    }

    #[test]
    fn negative_edge_cases() {
        let m = manifest(&[1, 1]);
        assert!(sample_negative_pairs(&m, 0, 0).unwrap().is_empty());
        let one = sample_negative_pairs(&m, 1, 0).unwrap();
        assert_eq!(one.len(), 1);
        assert!(sample_negative_pairs(&m, 2, 0).is_err());
        assert!(sample_negative_pairs(&manifest(&[5]), 1, 0).is_err());
        // Dense path: every cross pair requested.
        let m = manifest(&[2, 3]);
        assert_eq!(sample_negative_pairs(&m, 6, 4).unwrap().len(), 6);
    }

    #[test]
    fn fts_is_epoch_invariant_rnp_is_not() {
        let m = manifest(&[3, 4, 2, 5, 3, 2, 4, 3, 2, 3]);
        let positives = mine_positive_pairs(&m).len();
        let mut cfg = MiningConfig {
            mode: MiningMode::FTS,
            target_size: 2 * positives,
            seed: 17,
        };
        let e1 = build_training_pairs(&m, &cfg, 1).unwrap();
        assert_eq!(e1, build_training_pairs(&m, &cfg, 2).unwrap());
        assert!(e1.balanced);
        assert_eq!(e1.positives().count(), e1.negatives().count());

        cfg.mode = MiningMode::RNP;
        let r1 = build_training_pairs(&m, &cfg, 1).unwrap();
        let r2 = build_training_pairs(&m, &cfg, 2).unwrap();
        let pos = |s: &PairSet| s.positives().cloned().collect::<HashSet<_>>();
        let neg = |s: &PairSet| s.negatives().cloned().collect::<HashSet<_>>();
        assert_eq!(pos(&r1), pos(&r2));
        assert_ne!(neg(&r1), neg(&r2));
    }

    #[test]
    fn training_pairs_errors() {
        let m = manifest(&[2, 2]);
        let cfg = MiningConfig {
            mode: MiningMode::FTS,
            target_size: 6,
            seed: 0,
        };
        assert!(build_training_pairs(&m, &cfg, 0).is_err());
        let odd = MiningConfig { target_size: 3, ..cfg };
        assert!(build_training_pairs(&m, &odd, 0).is_err());
    }

    #[test]
    fn batch_pair_counts() {
        let batch: Vec<(Embedding, String)> = (0..32).map(|i| (emb(i as f64), format!("p{}", i % 8))).collect();
        let mut memory = CrossBatchMemory::new(128);
        assert_eq!(enumerate_batch_pairs(&batch, &memory).len(), 496);
        for step in 0..4 {
            memory.push(batch.clone(), step);
        }
        assert_eq!(memory.len(), 128);
        let pairs = enumerate_batch_pairs(&batch, &memory);
        assert_eq!(pairs.len(), 496 + 32 * 128);
        assert!(pairs.iter().all(|p| p.partner != Partner::Batch(p.anchor)));
    }

    #[test]
    fn memory_is_fifo() {
        let mut memory = CrossBatchMemory::new(128);
        for step in 0..5u64 {
            let batch = (0..32).map(|i| (emb(step as f64), format!("b{step}_{i}")));
            memory.push(batch, step);
            if step == 0 {
                assert_eq!(memory.len(), 32);
            }
        }
        assert_eq!(memory.len(), 128);
        assert!(memory.entries().all(|e| e.step >= 1));
        let steps: Vec<u64> = memory.entries().map(|e| e.step).collect();
        assert!(steps.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn zero_capacity_memory_stays_empty() {
        let mut memory = CrossBatchMemory::new(0);
        let batch: Vec<(Embedding, String)> = (0..4).map(|i| (emb(0.0), format!("p{i}"))).collect();
        memory.push(batch.clone(), 0);
        assert!(memory.is_empty());
        assert_eq!(enumerate_batch_pairs(&batch, &memory).len(), 6);
    }

    #[test]
    fn pair_csv_round_trip() {
        let m = manifest(&[3, 2, 2]);
        let set = balanced_eval_pairs(&m, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        set.write_csv(&path).unwrap();
        let back = PairSet::read_csv(&path, "").unwrap();
        assert_eq!(back.pairs, set.pairs);
        assert!(back.balanced);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("image_id_1,image_id_2,label\n"));
    }
}
