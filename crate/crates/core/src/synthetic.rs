//! Procedural identity dataset.
//!
//! Each identity owns a smooth random field (a sum of low-frequency
//! cosines) blended with a fixed chest-like template shared by everyone.
//! Each image of an identity views that field through its own random
//! rotation, scale, translation and intensity shift, then gets pixel
//! noise. Fields are evaluated analytically at the inverse-transformed
//! coordinates, so no interpolation is involved.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::catalog::{
    preprocess_raster, write_manifest, Gender, ImageBank, ImageRecord, Manifest, ManifestSchema, PreprocessSpec,
    Raster, View, NO_FINDING,
};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{rng_for, stream, Rng};

/// The fourteen ChestX-ray14 finding labels.
pub const FINDING_VOCABULARY: [&str; 14] = [
    "Atelectasis",
    "Cardiomegaly",
    "Consolidation",
    "Edema",
    "Effusion",
    "Emphysema",
    "Fibrosis",
    "Hernia",
    "Infiltration",
    "Mass",
    "Nodule",
    "Pleural_Thickening",
    "Pneumonia",
    "Pneumothorax",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_identities: usize,
    /// Inclusive range of images per identity.
    pub images_min: usize,
    pub images_max: usize,
    pub resolution: usize,
    /// Cosine components per identity field.
    pub components: usize,
    /// Highest spatial frequency, in cycles per image side.
    pub max_frequency: f64,
    /// Weight of the shared template against the identity field.
    pub template_weight: f64,
    /// Maximum absolute rotation in degrees.
    pub rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Maximum absolute translation as a fraction of the side.
    pub translate: f64,
    /// Maximum absolute additive intensity shift.
    pub intensity_shift: f64,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_identities: 50,
            images_min: 2,
            images_max: 5,
            resolution: 64,
            components: 8,
            max_frequency: 3.0,
            template_weight: 0.3,
            rotation_deg: 5.0,
            scale_min: 0.95,
            scale_max: 1.05,
            translate: 0.03,
            intensity_shift: 0.05,
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Same spec with every nuisance factor switched off.
    pub fn without_augmentation(&self) -> Self {
        SyntheticSpec {
            rotation_deg: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            translate: 0.0,
            intensity_shift: 0.0,
            noise_sigma: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_identities == 0 {
            problems.push("n_identities must be positive".to_owned());
        }
        if self.images_min == 0 || self.images_min > self.images_max {
            problems.push(format!(
                "images per identity must satisfy 1 ≤ min ≤ max, got {}..={}",
                self.images_min, self.images_max
            ));
        }
        if self.resolution < 8 {
            problems.push(format!("resolution must be at least 8, got {}", self.resolution));
        }
        if self.components == 0 {
            problems.push("components must be positive".to_owned());
        }
        if !(self.max_frequency > 0.0) {
            problems.push("max_frequency must be positive".to_owned());
        }
        if !(0.0..=1.0).contains(&self.template_weight) {
            problems.push("template_weight must lie in [0, 1]".to_owned());
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            problems.push("scale range must satisfy 0 < min ≤ max".to_owned());
        }
        for (name, v) in [
            ("rotation_deg", self.rotation_deg),
            ("translate", self.translate),
            ("intensity_shift", self.intensity_shift),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be finite and non-negative"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Wave {
    amp: f64,
    u: f64,
    v: f64,
    phase: f64,
}

/// Smooth random field of one identity with values in about [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityField {
    waves: Vec<Wave>,
    norm: f64,
    template_weight: f64,
}

impl IdentityField {
    pub fn new(spec: &SyntheticSpec, identity: u64) -> Self {
        let mut rng = rng_for(spec.seed, &[stream::SYNTH_IDENTITY, identity]);
        let waves: Vec<Wave> = (0..spec.components)
            .map(|_| {
                let r = rng.random_range(0.5..spec.max_frequency.max(0.5 + 1e-9));
                let theta = rng.random_range(0.0..2.0 * PI);
                Wave {
                    amp: rng.random_range(0.5..1.0),
                    u: r * theta.cos(),
                    v: r * theta.sin(),
                    phase: rng.random_range(0.0..2.0 * PI),
                }
            })
            .collect();
        let norm = waves.iter().map(|w| w.amp).sum();
        IdentityField {
            waves,
            norm,
            template_weight: spec.template_weight,
        }
    }

    /// Value at normalized coordinates, the image spanning [−½, ½]².
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let s: f64 = self
            .waves
            .iter()
            .map(|w| w.amp * (2.0 * PI * (w.u * x + w.v * y) + w.phase).cos())
            .sum();
        let own = 0.5 + 0.5 * s / self.norm;
        self.template_weight * template(x, y) + (1.0 - self.template_weight) * own
    }
}

/// Bright mediastinum and dark lung fields.
fn template(x: f64, y: f64) -> f64 {
    let lung = |cx: f64| {
        let dx = (x - cx) / 0.18;
        let dy = (y + 0.02) / 0.32;
        (-(dx * dx + dy * dy).powi(2)).exp()
    };
    let body = (-((x / 0.45).powi(8) + (y / 0.48).powi(8))).exp();
    (0.85 * body - 0.6 * (lung(-0.2) + lung(0.2))).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct View2d {
    cos: f64,
    sin: f64,
    scale: f64,
    tx: f64,
    ty: f64,
    shift: f64,
}

/// Renders one image as 8-bit gray pixels, row-major.
fn render(spec: &SyntheticSpec, field: &IdentityField, identity: u64, image: u64) -> Vec<u8> {
    let mut rng = rng_for(spec.seed, &[stream::SYNTH_IMAGE, identity, image]);
    let sym = |bound: f64, rng: &mut Rng| if bound > 0.0 { rng.random_range(-bound..=bound) } else { 0.0 };
    let angle = sym(spec.rotation_deg, &mut rng).to_radians();
    let scale = if spec.scale_max > spec.scale_min {
        rng.random_range(spec.scale_min..=spec.scale_max)
    } else {
        spec.scale_min
    };
    let view = View2d {
        cos: angle.cos(),
        sin: angle.sin(),
        scale,
        tx: sym(spec.translate, &mut rng),
        ty: sym(spec.translate, &mut rng),
        shift: sym(spec.intensity_shift, &mut rng),
    };
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let n = spec.resolution;
    let mut out = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            let x = (col as f64 + 0.5) / n as f64 - 0.5 - view.tx;
            let y = (row as f64 + 0.5) / n as f64 - 0.5 - view.ty;
            // Inverse of rotate-then-scale.
            let sx = (view.cos * x + view.sin * y) / view.scale;
            let sy = (-view.sin * x + view.cos * y) / view.scale;
            let mut v = field.eval(sx, sy) + view.shift;
            if spec.noise_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

fn image_id(patient: usize, follow_up: usize) -> String {
    format!("{:08}_{:03}.png", patient + 1, follow_up)
}

/// Metadata for every image, identity by identity.
fn records(spec: &SyntheticSpec, image_root: &Path) -> Vec<ImageRecord> {
    let mut out = Vec::new();
    for p in 0..spec.n_identities {
        let mut rng = rng_for(spec.seed, &[stream::SYNTH_META, p as u64]);
        let count = rng.random_range(spec.images_min..=spec.images_max);
        let gender = if rng.random_bool(0.5) { Gender::M } else { Gender::F };
        let mut age = rng.random_range(20u32..=80);
        for f in 0..count {
            if f > 0 {
                age += rng.random_range(0u32..=2);
            }
            let view = if rng.random_bool(0.5) { View::AP } else { View::PA };
            let mut labels = BTreeSet::new();
            if rng.random_bool(0.5) {
                labels.insert(NO_FINDING.to_owned());
            } else {
                for _ in 0..rng.random_range(1..=2) {
                    labels.insert(FINDING_VOCABULARY[rng.random_range(0..FINDING_VOCABULARY.len())].to_owned());
                }
            }
            let id = image_id(p, f);
            out.push(ImageRecord {
                source_path: image_root.join(&id),
                image_id: id,
                patient_id: (p + 1).to_string(),
                follow_up_index: f as u32,
                age_years: Some(age),
                gender,
                view,
                finding_labels: labels,
            });
        }
    }
    out
}

/// Pixels of every image, in manifest order.
pub fn render_all(spec: &SyntheticSpec, manifest: &Manifest) -> Vec<Vec<u8>> {
    let fields: Vec<IdentityField> = (0..spec.n_identities)
        .map(|p| IdentityField::new(spec, p as u64))
        .collect();
    par::map_slice(manifest.records(), |r| {
        let p: usize = r.patient_id.parse::<usize>().expect("synthetic patient id") - 1;
        render(spec, &fields[p], p as u64, r.follow_up_index as u64)
    })
}

/// Manifest of the dataset, with image paths under `image_root`.
pub fn synthetic_manifest(spec: &SyntheticSpec, image_root: &Path) -> Result<Manifest> {
    spec.validate()?;
    Manifest::new(records(spec, image_root))
}

/// Writes `images/*.png` and `manifest.csv` (ChestX-ray14 columns) into
/// `output_dir` and returns the manifest.
pub fn generate(spec: &SyntheticSpec, output_dir: &Path) -> Result<Manifest> {
    let image_root: PathBuf = output_dir.join("images");
    std::fs::create_dir_all(&image_root).map_err(|e| Error::io(&image_root, e))?;
    let manifest = synthetic_manifest(spec, &image_root)?;
    let pixels = render_all(spec, &manifest);
    let n = spec.resolution as u32;
    let written = par::map_range(pixels.len(), |i| {
        let r = &manifest.records()[i];
        let img = image::GrayImage::from_raw(n, n, pixels[i].clone()).expect("buffer size");
        img.save(&r.source_path).map_err(|e| Error::ImageLoad {
            path: r.source_path.clone(),
            message: e.to_string(),
        })
    });
    written.into_iter().collect::<Result<Vec<()>>>()?;
    write_manifest(&output_dir.join("manifest.csv"), &manifest, &ManifestSchema::chestxray14())?;
    Ok(manifest)
}

/// The dataset without touching the file system: the manifest and a bank
/// of preprocessed images equal to what loading the written PNGs yields.
pub fn generate_in_memory(spec: &SyntheticSpec, preprocess: &PreprocessSpec) -> Result<(Manifest, ImageBank)> {
    let manifest = synthetic_manifest(spec, Path::new("images"))?;
    let pixels = render_all(spec, &manifest);
    let n = spec.resolution;
    let tensors = par::map_slice(&pixels, |px| {
        let raster = Raster::gray(n, n, px.iter().map(|&v| v as f64 / 255.0).collect());
        preprocess_raster(&raster, preprocess)
    });
    let mut bank = ImageBank::new();
    for (r, t) in manifest.records().iter().zip(tensors) {
        bank.insert(r.image_id.clone(), t?);
    }
    Ok((manifest, bank))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::read_manifest;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_identities: 6,
            resolution: 24,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn counts_follow_spec() {
        let m = synthetic_manifest(&SyntheticSpec::default(), Path::new("x")).unwrap();
        assert_eq!(m.patient_count(), 50);
        for (_, idx) in m.patient_index() {
            assert!((2..=5).contains(&idx.len()));
        }
    }

    #[test]
    fn deterministic_and_distinct() {
        let spec = small();
        let m = synthetic_manifest(&spec, Path::new("x")).unwrap();
        assert_eq!(render_all(&spec, &m), render_all(&spec, &m));
        let fields: Vec<IdentityField> = (0..6).map(|p| IdentityField::new(&spec, p)).collect();
        for i in 0..6 {
            for j in i + 1..6 {
                assert_ne!(fields[i], fields[j]);
            }
        }
    }

    #[test]
    fn no_augmentation_means_identical_images() {
        let spec = small().without_augmentation();
        let m = synthetic_manifest(&spec, Path::new("x")).unwrap();
        let px = render_all(&spec, &m);
        for idx in m.patient_index().values() {
            for &i in &idx[1..] {
                assert_eq!(px[i], px[idx[0]]);
            }
        }
    }

    #[test]
    fn written_dataset_reads_back_like_in_memory() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small();
        let written = generate(&spec, dir.path()).unwrap();
        let read = read_manifest(&dir.path().join("manifest.csv"), &ManifestSchema::chestxray14(), None).unwrap();
        assert!(read.issues().is_empty());
        assert_eq!(read.records(), written.records());
        let pre = PreprocessSpec::new(16);
        let (mem, bank) = generate_in_memory(&spec, &pre).unwrap();
        assert_eq!(mem.len(), read.len());
        let (disk, failures) = ImageBank::load(&read, &pre);
        assert!(failures.is_empty());
        for r in read.records() {
            assert_eq!(disk.get(&r.image_id).unwrap(), bank.get(&r.image_id).unwrap());
        }
    }
}
