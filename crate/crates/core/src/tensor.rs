//! Dense channel-major feature maps and planar resampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `channels × height × width` block of reals stored channel-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor3 {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape {
                expected: format!("{channels}x{height}x{width} = {}", channels * height * width),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Tensor3 {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Triangle-filter weights for resampling one axis from `src` to `dst`
/// samples. Downscaling widens the filter so every source sample
/// contributes (antialiasing); at equal sizes the weights are the identity.
fn axis_weights(src: usize, dst: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = src as f64 / dst as f64;
    let filter_scale = scale.max(1.0);
    let support = filter_scale;
    (0..dst)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale;
            let lo = ((center - support).floor().max(0.0)) as usize;
            let hi = ((center + support).ceil() as usize).min(src);
            let mut w: Vec<f64> = (lo..hi)
                .map(|j| {
                    let t = ((j as f64 + 0.5 - center) / filter_scale).abs();
                    (1.0 - t).max(0.0)
                })
                .collect();
            let total: f64 = w.iter().sum();
            if total > 0.0 {
                w.iter_mut().for_each(|v| *v /= total);
            }
            (lo, w)
        })
        .collect()
}

/// Bilinear resampling of a row-major `height × width` plane.
pub fn resize_plane(
    plane: &[f64],
    height: usize,
    width: usize,
    new_height: usize,
    new_width: usize,
) -> Vec<f64> {
    debug_assert_eq!(plane.len(), height * width);
    if height == new_height && width == new_width {
        return plane.to_vec();
    }
    let wx = axis_weights(width, new_width);
    let mut horizontal = vec![0.0; height * new_width];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for (x, (lo, w)) in wx.iter().enumerate() {
            horizontal[y * new_width + x] = w.iter().zip(&row[*lo..]).map(|(a, b)| a * b).sum();
        }
    }
    let wy = axis_weights(height, new_height);
    let mut out = vec![0.0; new_height * new_width];
    for (y, (lo, w)) in wy.iter().enumerate() {
        let dst = &mut out[y * new_width..(y + 1) * new_width];
        for (k, weight) in w.iter().enumerate() {
            let src = &horizontal[(lo + k) * new_width..(lo + k + 1) * new_width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += weight * s;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_resize_is_exact() {
        let plane: Vec<f64> = (0..12).map(|v| v as f64 * 0.37).collect();
        assert_eq!(resize_plane(&plane, 3, 4, 3, 4), plane);
    }

    #[test]
    fn constant_plane_stays_constant() {
        let plane = vec![0.25; 64 * 48];
        for (h, w) in [(16, 16), (100, 7), (64, 48)] {
            let out = resize_plane(&plane, 64, 48, h, w);
            assert!(out.iter().all(|v| (v - 0.25).abs() < 1e-12));
        }
    }

    #[test]
    fn downscale_by_two_averages_blocks() {
        // 1-D ramp: every output is a weighted mean of its neighbourhood.
        let plane: Vec<f64> = (0..8).map(|v| v as f64).collect();
        let out = resize_plane(&plane, 1, 8, 1, 4);
        assert_eq!(out.len(), 4);
        assert!(out.windows(2).all(|w| w[0] < w[1]));
        assert!((out.iter().sum::<f64>() / 4.0 - 3.5).abs() < 0.2);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor3::from_vec(3, 2, 2, vec![0.0; 11]).is_err());
    }
}
