use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{resize_plane, Tensor3};

/// ImageNet channel statistics, the usual normalization for backbones
/// pretrained on it.
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    /// Side length of the square network input.
    pub target_resolution: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl PreprocessSpec {
    pub fn new(target_resolution: usize) -> Self {
        PreprocessSpec {
            target_resolution,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }

    /// Leaves values in `[0, 1]`.
    pub fn identity_normalization(target_resolution: usize) -> Self {
        PreprocessSpec {
            target_resolution,
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_resolution == 0 {
            return Err(Error::InvalidArgument("target resolution must be positive".into()));
        }
        if self.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument(format!("normalization std must be positive, got {:?}", self.std)));
        }
        Ok(())
    }
}

/// A decoded raster with values in `[0, 1]`: one plane for grayscale,
/// three for RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub planes: Vec<Vec<f64>>,
}

impl Raster {
    pub fn gray(height: usize, width: usize, plane: Vec<f64>) -> Self {
        debug_assert_eq!(plane.len(), height * width);
        Raster {
            height,
            width,
            planes: vec![plane],
        }
    }
}

/// Decodes an 8-bit grayscale or 24-bit RGB file.
pub fn load_raster(path: &Path) -> Result<Raster> {
    let img = image::open(path).map_err(|e| Error::ImageLoad {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let planes = if img.color().has_color() {
        let rgb = img.to_rgb8();
        (0..3)
            .map(|c| rgb.pixels().map(|p| p.0[c] as f64 / 255.0).collect())
            .collect()
    } else {
        let gray = img.to_luma8();
        vec![gray.pixels().map(|p| p.0[0] as f64 / 255.0).collect()]
    };
    Ok(Raster { height, width, planes })
}

/// Resizes, replicates gray to three channels and normalizes.
pub fn preprocess_raster(raster: &Raster, spec: &PreprocessSpec) -> Result<Tensor3> {
    spec.validate()?;
    let r = spec.target_resolution;
    let resized: Vec<Vec<f64>> = raster
        .planes
        .iter()
        .map(|p| resize_plane(p, raster.height, raster.width, r, r))
        .collect();
    let mut out = Tensor3::zeros(3, r, r);
    for c in 0..3 {
        let src = &resized[if resized.len() == 1 { 0 } else { c }];
        let (mean, std) = (spec.mean[c], spec.std[c]);
        for (d, s) in out.channel_mut(c).iter_mut().zip(src) {
            *d = (s - mean) / std;
        }
    }
    Ok(out)
}

pub fn load_and_preprocess(path: &Path, spec: &PreprocessSpec) -> Result<Tensor3> {
    preprocess_raster(&load_raster(path)?, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma};

    fn write_gray(dir: &Path, size: u32, f: impl Fn(u32, u32) -> u8) -> std::path::PathBuf {
        let img = GrayImage::from_fn(size, size, |x, y| Luma([f(x, y)]));
        let path = dir.join(format!("g{size}.png"));
        img.save(&path).unwrap();
        path
    }

    #[test]
    fn full_size_gray_downsampled_to_network_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_gray(dir.path(), 1024, |x, y| ((x ^ y) & 0xff) as u8);
        let t = load_and_preprocess(&path, &PreprocessSpec::new(256)).unwrap();
        assert_eq!(t.shape(), [3, 256, 256]);
    }

    #[test]
    fn constant_image_stays_constant_per_channel() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_gray(dir.path(), 40, |_, _| 90);
        let t = load_and_preprocess(&path, &PreprocessSpec::new(17)).unwrap();
        for c in 0..3 {
            let ch = t.channel(c);
            assert!(ch.iter().all(|v| (v - ch[0]).abs() < 1e-12));
        }
    }

    #[test]
    fn no_op_resize_reproduces_raster() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_gray(dir.path(), 32, |x, y| (x * 7 + y * 3) as u8);
        let t = load_and_preprocess(&path, &PreprocessSpec::identity_normalization(32)).unwrap();
        let raw = image::open(&path).unwrap().to_luma8();
        for c in 0..3 {
            for (v, p) in t.channel(c).iter().zip(raw.pixels()) {
                assert_eq!(*v, p.0[0] as f64 / 255.0);
            }
        }
    }

    #[test]
    fn gray_channels_identical_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_gray(dir.path(), 50, |x, y| (x * y % 251) as u8);
        let spec = PreprocessSpec::identity_normalization(24);
        let a = load_and_preprocess(&path, &spec).unwrap();
        let b = load_and_preprocess(&path, &spec).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.channel(0), a.channel(1));
        assert_eq!(a.channel(1), a.channel(2));
    }

    #[test]
    fn undecodable_file_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.png");
        std::fs::write(&path, b"not a png").unwrap();
        match load_and_preprocess(&path, &PreprocessSpec::new(8)) {
            Err(Error::ImageLoad { path: p, .. }) => assert_eq!(p, path),
            other => panic!("unexpected {other:?}"),
        }
    }
}
