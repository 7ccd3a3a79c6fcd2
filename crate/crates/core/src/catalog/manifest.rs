use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NO_FINDING: &str = "No Finding";
pub const MAX_AGE_YEARS: u32 = 120;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum View {
    AP,
    PA,
    Unknown,
}

impl Gender {
    fn parse(s: &str) -> Self {
        match s.trim().to_ascii_uppercase().as_str() {
            "M" | "MALE" => Gender::M,
            "F" | "FEMALE" => Gender::F,
            _ => Gender::Unknown,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Gender::M => "M",
            Gender::F => "F",
            Gender::Unknown => "",
        }
    }
}

impl View {
    fn parse(s: &str) -> Self {
        match s.trim().to_ascii_uppercase().as_str() {
            "AP" => View::AP,
            "PA" => View::PA,
            _ => View::Unknown,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            View::AP => "AP",
            View::PA => "PA",
            View::Unknown => "",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::Unknown => "unknown",
            v => v.as_str(),
        })
    }
}

/// Metadata of one radiograph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub patient_id: String,
    pub follow_up_index: u32,
    /// `None` when the raw age could not be parsed; such rows are listed in
    /// [`Manifest::issues`].
    pub age_years: Option<u32>,
    pub gender: Gender,
    pub view: View,
    pub finding_labels: BTreeSet<String>,
    pub source_path: PathBuf,
}

impl ImageRecord {
    pub fn is_normal(&self) -> bool {
        self.finding_labels.len() == 1 && self.finding_labels.contains(NO_FINDING)
    }
}

/// A problem with a row that did not prevent it from being ingested.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordIssue {
    pub row: usize,
    pub image_id: String,
    pub message: String,
}

/// Ordered image records plus a patient index over them.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Manifest {
    records: Vec<ImageRecord>,
    patient_index: BTreeMap<String, Vec<usize>>,
    issues: Vec<RecordIssue>,
}

impl Manifest {
    /// Builds a manifest, rejecting duplicate image ids.
    pub fn new(records: Vec<ImageRecord>) -> Result<Self> {
        Self::with_issues(records, Vec::new())
    }

    fn with_issues(records: Vec<ImageRecord>, issues: Vec<RecordIssue>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        let mut patient_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (pos, r) in records.iter().enumerate() {
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::BadRecord {
                    row: pos + 1,
                    message: format!("duplicate image id `{}`", r.image_id),
                });
            }
            patient_index.entry(r.patient_id.clone()).or_default().push(pos);
        }
        Ok(Manifest {
            records,
            patient_index,
            issues,
        })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn patient_count(&self) -> usize {
        self.patient_index.len()
    }

    /// Patient id → positions of that patient's records, in record order.
    pub fn patient_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.patient_index
    }

    pub fn patients(&self) -> impl Iterator<Item = &str> {
        self.patient_index.keys().map(String::as_str)
    }

    pub fn images_of(&self, patient_id: &str) -> impl Iterator<Item = &ImageRecord> {
        self.patient_index
            .get(patient_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.records[i])
    }

    pub fn issues(&self) -> &[RecordIssue] {
        &self.issues
    }

    pub fn find(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    /// Image id → patient id lookup table.
    pub fn patient_of(&self) -> std::collections::HashMap<&str, &str> {
        self.records
            .iter()
            .map(|r| (r.image_id.as_str(), r.patient_id.as_str()))
            .collect()
    }
}

/// Maps the logical fields onto CSV header names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSchema {
    pub image_id: String,
    pub patient_id: String,
    pub follow_up: String,
    pub age: String,
    pub gender: String,
    pub view: String,
    pub findings: String,
    /// Optional column holding the image path; when absent the path is the
    /// image root joined with the image id.
    pub path: Option<String>,
}

impl ManifestSchema {
    /// Column layout of the ChestX-ray14 `Data_Entry_2017.csv` file.
    pub fn chestxray14() -> Self {
        ManifestSchema {
            image_id: "Image Index".into(),
            patient_id: "Patient ID".into(),
            follow_up: "Follow-up #".into(),
            age: "Patient Age".into(),
            gender: "Patient Gender".into(),
            view: "View Position".into(),
            findings: "Finding Labels".into(),
            path: None,
        }
    }

    fn required(&self) -> [&str; 7] {
        [
            &self.image_id,
            &self.findings,
            &self.follow_up,
            &self.patient_id,
            &self.age,
            &self.gender,
            &self.view,
        ]
    }
}

impl Default for ManifestSchema {
    fn default() -> Self {
        Self::chestxray14()
    }
}

/// Parses an age cell. Plain integers and `Y` suffixes are years; `M`,
/// `W` and `D` suffixes are converted. Results are clamped at 120.
fn parse_age(raw: &str) -> Option<u32> {
    let s = raw.trim();
    if s.is_empty() {
        return None;
    }
    let (digits, unit) = match s.char_indices().last() {
        Some((i, c)) if c.is_ascii_alphabetic() => (&s[..i], c.to_ascii_uppercase()),
        _ => (s, 'Y'),
    };
    let value: f64 = digits.trim().parse().ok()?;
    if !value.is_finite() || value < 0.0 {
        return None;
    }
    let years = match unit {
        'Y' => value,
        'M' => value / 12.0,
        'W' => value / 52.0,
        'D' => value / 365.0,
        _ => return None,
    };
    Some((years.floor() as u32).min(MAX_AGE_YEARS))
}

fn split_findings(raw: &str) -> BTreeSet<String> {
    let mut labels: BTreeSet<String> = raw
        .split('|')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect();
    if labels.is_empty() {
        labels.insert(NO_FINDING.to_owned());
    }
    labels
}

/// Parses manifest CSV text. Image paths are resolved against `image_root`
/// unless the schema names a path column.
pub fn parse_manifest(csv_content: &str, schema: &ManifestSchema, image_root: &Path) -> Result<Manifest> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::None)
        .from_reader(csv_content.as_bytes());
    let headers = reader.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn { column: name.to_owned() })
    };
    for name in schema.required() {
        column(name)?;
    }
    let c_image = column(&schema.image_id)?;
    let c_patient = column(&schema.patient_id)?;
    let c_follow = column(&schema.follow_up)?;
    let c_age = column(&schema.age)?;
    let c_gender = column(&schema.gender)?;
    let c_view = column(&schema.view)?;
    let c_findings = column(&schema.findings)?;
    let c_path = schema.path.as_deref().map(column).transpose()?;

    let mut records = Vec::new();
    let mut issues = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 1;
        let cell = |c: usize| row.get(c).unwrap_or("").trim();
        let image_id = cell(c_image).to_owned();
        if image_id.is_empty() {
            return Err(Error::BadRecord {
                row: line,
                message: "empty image id".into(),
            });
        }
        let patient_id = cell(c_patient).to_owned();
        if patient_id.is_empty() {
            return Err(Error::BadRecord {
                row: line,
                message: format!("empty patient id for `{image_id}`"),
            });
        }
        let follow_up_index = cell(c_follow).parse().map_err(|_| Error::BadRecord {
            row: line,
            message: format!("unparseable follow-up index `{}`", cell(c_follow)),
        })?;
        let age_years = parse_age(cell(c_age));
        if age_years.is_none() {
            issues.push(RecordIssue {
                row: line,
                image_id: image_id.clone(),
                message: format!("unparseable age `{}`", cell(c_age)),
            });
        }
        let source_path = match c_path {
            Some(c) => PathBuf::from(cell(c)),
            None => image_root.join(&image_id),
        };
        records.push(ImageRecord {
            patient_id,
            follow_up_index,
            age_years,
            gender: Gender::parse(cell(c_gender)),
            view: View::parse(cell(c_view)),
            finding_labels: split_findings(cell(c_findings)),
            source_path,
            image_id,
        });
    }
    Manifest::with_issues(records, issues)
}

/// Writes a manifest in the schema's column layout.
pub fn serialize_manifest(manifest: &Manifest, schema: &ManifestSchema) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = schema.required().to_vec();
    if let Some(p) = &schema.path {
        header.push(p);
    }
    writer.write_record(&header)?;
    for r in manifest.records() {
        let findings = r
            .finding_labels
            .iter()
            .map(String::as_str)
            .collect::<Vec<_>>()
            .join("|");
        let follow = r.follow_up_index.to_string();
        let age = r.age_years.map(|a| a.to_string()).unwrap_or_default();
        let mut row = vec![
            r.image_id.as_str(),
            &findings,
            &follow,
            &r.patient_id,
            &age,
            r.gender.as_str(),
            r.view.as_str(),
        ];
        let path = r.source_path.to_string_lossy();
        if schema.path.is_some() {
            row.push(&path);
        }
        writer.write_record(&row)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::format("manifest", e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::format("manifest", e.to_string()))
}

/// Reads a manifest file; without a path column, images are looked up in
/// `image_root` (default: the `images` directory next to the file).
pub fn read_manifest(path: &Path, schema: &ManifestSchema, image_root: Option<&Path>) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let default_root;
    let root = match image_root {
        Some(r) => r,
        None => {
            default_root = path.parent().unwrap_or(Path::new(".")).join("images");
            &default_root
        }
    };
    parse_manifest(&text, schema, root)
}

pub fn write_manifest(path: &Path, manifest: &Manifest, schema: &ManifestSchema) -> Result<()> {
    let text = serialize_manifest(manifest, schema)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Keeps the records satisfying `predicate`, in order.
pub fn filter_manifest<F>(manifest: &Manifest, predicate: F) -> Manifest
where
    F: Fn(&ImageRecord) -> bool,
{
    let records: Vec<ImageRecord> = manifest.records.iter().filter(|r| predicate(r)).cloned().collect();
    let kept: HashSet<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
    let issues = manifest
        .issues
        .iter()
        .filter(|i| kept.contains(i.image_id.as_str()))
        .cloned()
        .collect();
    Manifest::with_issues(records, issues).expect("subset of a valid manifest has unique ids")
}
