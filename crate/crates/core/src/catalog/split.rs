use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::manifest::{filter_manifest, Manifest};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

/// Patient → split mapping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<String, Split>,
    /// Target image fractions (train, val, test). For splits read from a
    /// file these are the realized fractions over the file's patients.
    pub fractions: [f64; 3],
    /// `None` for externally supplied splits.
    pub seed: Option<u64>,
}

impl SplitAssignment {
    pub fn split_of(&self, patient_id: &str) -> Option<Split> {
        self.assignment.get(patient_id).copied()
    }

    /// Records of `manifest` whose patient is assigned to `split`.
    pub fn subset(&self, manifest: &Manifest, split: Split) -> Manifest {
        filter_manifest(manifest, |r| self.split_of(&r.patient_id) == Some(split))
    }

    pub fn patients_in(&self, split: Split) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(move |(_, s)| **s == split)
            .map(|(p, _)| p.as_str())
    }

    /// Image counts per split in train/val/test order.
    pub fn image_counts(&self, manifest: &Manifest) -> [usize; 3] {
        let mut counts = [0; 3];
        for (pid, pos) in manifest.patient_index() {
            if let Some(s) = self.split_of(pid) {
                counts[s as usize] += pos.len();
            }
        }
        counts
    }
}

/// Assigns whole patients to train/val/test.
///
/// Patients are shuffled with the seeded generator, then each goes to the
/// split with the largest remaining image quota, so split image fractions
/// track `fractions` while no patient straddles two splits.
pub fn patient_wise_split(manifest: &Manifest, fractions: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    if manifest.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty manifest".into()));
    }
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::InvalidArgument(format!("fractions must be non-negative, got {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("fractions must sum to 1, got {total}")));
    }

    let mut patients: Vec<(&str, usize)> = manifest
        .patient_index()
        .iter()
        .map(|(p, pos)| (p.as_str(), pos.len()))
        .collect();
    patients.shuffle(&mut rng_for(seed, &[stream::SPLIT]));

    let n_images = manifest.len() as f64;
    let quota: Vec<f64> = fractions.iter().map(|f| f * n_images).collect();
    let mut filled = [0usize; 3];
    let mut assignment = BTreeMap::new();
    for (pid, count) in patients {
        let best = (0..3)
            .filter(|&i| fractions[i] > 0.0)
            .max_by(|&a, &b| {
                let ra = quota[a] - filled[a] as f64;
                let rb = quota[b] - filled[b] as f64;
                // Ties go to the earlier split.
                ra.total_cmp(&rb).then(b.cmp(&a))
            })
            .expect("at least one fraction is positive");
        filled[best] += count;
        assignment.insert(pid.to_owned(), Split::ALL[best]);
    }
    Ok(SplitAssignment {
        assignment,
        fractions,
        seed: Some(seed),
    })
}

/// Writes `patient_id,split_name` lines sorted by patient id.
pub fn write_split_file(path: &Path, split: &SplitAssignment) -> Result<()> {
    let mut out = String::new();
    for (pid, s) in &split.assignment {
        out.push_str(pid);
        out.push(',');
        out.push_str(s.name());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a split file; fractions are computed against `manifest`.
pub fn read_split_file(path: &Path, manifest: &Manifest) -> Result<SplitAssignment> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut assignment = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (pid, name) = line
            .rsplit_once(',')
            .ok_or_else(|| Error::format("split file", format!("line {}: expected `patient_id,split`", i + 1)))?;
        assignment.insert(pid.trim().to_owned(), name.parse()?);
    }
    let mut split = SplitAssignment {
        assignment,
        fractions: [0.0; 3],
        seed: None,
    };
    let counts = split.image_counts(manifest);
    let total: usize = counts.iter().sum();
    if total > 0 {
        split.fractions = counts.map(|c| c as f64 / total as f64);
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Gender, ImageRecord, View};
    use std::collections::BTreeSet;
    use std::path::PathBuf;

    fn manifest(counts: &[usize]) -> Manifest {
        let mut records = Vec::new();
        for (p, &k) in counts.iter().enumerate() {
            for f in 0..k {
                records.push(ImageRecord {
                    image_id: format!("{p:05}_{f:03}.png"),
                    patient_id: format!("{p:05}"),
                    follow_up_index: f as u32,
                    age_years: Some(40),
                    gender: Gender::F,
                    view: View::PA,
                    finding_labels: BTreeSet::from(["No Finding".to_owned()]),
                    source_path: PathBuf::new(),
                });
            }
        }
        Manifest::new(records).unwrap()
    }

    #[test]
    fn degenerate_fractions_put_everyone_in_train() {
        let m = manifest(&[1, 2, 3, 4]);
        let s = patient_wise_split(&m, [1.0, 0.0, 0.0], 3).unwrap();
        assert!(s.assignment.values().all(|&v| v == Split::Train));
    }

    #[test]
    fn no_patient_spans_splits() {
        let counts: Vec<usize> = (0..100).map(|i| 1 + i % 7).collect();
        let m = manifest(&counts);
        let s = patient_wise_split(&m, [0.7, 0.1, 0.2], 11).unwrap();
        // Exhaustive scan: collect the split of every image per patient.
        let mut seen: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
        for r in m.records() {
            seen.entry(&r.patient_id)
                .or_default()
                .insert(s.split_of(&r.patient_id).unwrap());
        }
        assert_eq!(seen.len(), 100);
        assert!(seen.values().all(|v| v.len() == 1));
        let subsets: Vec<Manifest> = Split::ALL.iter().map(|&x| s.subset(&m, x)).collect();
        for a in 0..3 {
            for b in a + 1..3 {
                let pa: BTreeSet<&str> = subsets[a].patients().collect();
                assert!(subsets[b].patients().all(|p| !pa.contains(p)));
            }
        }
        assert_eq!(subsets.iter().map(Manifest::len).sum::<usize>(), m.len());
    }

    #[test]
    fn deterministic_and_close_to_targets() {
        let counts: Vec<usize> = (0..3000).map(|i| 1 + (i * 7919) % 9).collect();
        let m = manifest(&counts);
        let a = patient_wise_split(&m, [0.7, 0.1, 0.2], 5).unwrap();
        let b = patient_wise_split(&m, [0.7, 0.1, 0.2], 5).unwrap();
        assert_eq!(a, b);
        let got = a.image_counts(&m);
        for (i, f) in [0.7, 0.1, 0.2].iter().enumerate() {
            let frac = got[i] as f64 / m.len() as f64;
            assert!((frac - f).abs() < 0.01, "split {i}: {frac}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(patient_wise_split(&Manifest::default(), [0.7, 0.1, 0.2], 1).is_err());
        let m = manifest(&[2]);
        assert!(patient_wise_split(&m, [0.7, 0.1, 0.1], 1).is_err());
        assert!(patient_wise_split(&m, [1.2, -0.2, 0.0], 1).is_err());
    }

    #[test]
    fn split_file_round_trip() {
        let m = manifest(&[2, 3, 1, 4, 2]);
        let s = patient_wise_split(&m, [0.6, 0.2, 0.2], 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.csv");
        write_split_file(&path, &s).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let ids: Vec<&str> = text.lines().map(|l| l.split(',').next().unwrap()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        let back = read_split_file(&path, &m).unwrap();
        assert_eq!(back.assignment, s.assignment);
    }
}
