//! Grad-CAM attention maps for the verification network.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::verification::VerificationNet;
use crate::error::{Error, Result};
use crate::tensor::{resize_plane, Tensor3};

/// Non-negative map normalized so that its maximum is 1 (unless the raw
/// map is identically zero).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub layer_id: String,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl AttentionMap {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let pixels: Vec<u8> = self
            .values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, pixels)
            .ok_or_else(|| Error::format("attention map", "size mismatch"))?;
        img.save(path).map_err(|e| Error::ImageLoad {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }
}

/// Rectified, gradient-weighted channel sum at the activation's own
/// resolution (before upsampling and normalization).
pub fn weighted_activation(activation: &Tensor3, gradient: &Tensor3) -> Vec<f64> {
    let n = activation.plane_len() as f64;
    let mut cam = vec![0.0; activation.plane_len()];
    for c in 0..activation.channels() {
        let alpha = gradient.channel(c).iter().sum::<f64>() / n;
        for (m, a) in cam.iter_mut().zip(activation.channel(c)) {
            *m += alpha * a;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    cam
}

fn finish(raw: Vec<f64>, act: &Tensor3, out_h: usize, out_w: usize, layer_id: &str) -> AttentionMap {
    let mut values = resize_plane(&raw, act.height(), act.width(), out_h, out_w);
    // Resampling weights are non-negative, but guard rounding.
    values.iter_mut().for_each(|v| *v = v.max(0.0));
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    }
    AttentionMap {
        layer_id: layer_id.to_owned(),
        height: out_h,
        width: out_w,
        values,
    }
}

/// One map per input, upsampled to the input's spatial size.
pub fn grad_cam(
    net: &VerificationNet,
    store: &ParamStore,
    x1: &Tensor3,
    x2: &Tensor3,
    layer_id: &str,
) -> Result<(AttentionMap, AttentionMap)> {
    let layer = net.trunk().layer_index(layer_id)?;
    let [(a1, g1), (a2, g2)] = net.layer_gradients(store, x1, x2, layer)?;
    let m1 = finish(weighted_activation(&a1, &g1), &a1, x1.height(), x1.width(), layer_id);
    let m2 = finish(weighted_activation(&a2, &g2), &a2, x2.height(), x2.width(), layer_id);
    Ok((m1, m2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{sigmoid, Activation};
    use crate::nn::trunk::{ConvBlockSpec, TrunkSpec};
    use crate::nn::verification::VerificationNetSpec;
    use crate::rng::rng_for;
    use rand::Rng as _;

    fn image(res: usize, seed: u64) -> Tensor3 {
        let mut rng = rng_for(seed, &[]);
        Tensor3::from_vec(3, res, res, (0..3 * res * res).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn maps_are_normalized_and_input_sized() {
        let spec = VerificationNetSpec {
            trunk: crate::nn::trunk::trunk_spec("tiny").unwrap(),
            pool_grid: 2,
            input_resolution: 16,
        };
        let (net, store) = VerificationNet::new(&spec, 3).unwrap();
        let (a, b) = (image(16, 1), image(16, 2));
        for layer in ["conv1", "conv2", "conv3"] {
            let (m1, m2) = grad_cam(&net, &store, &a, &b, layer).unwrap();
            for m in [&m1, &m2] {
                assert_eq!((m.height, m.width), (16, 16));
                assert!(m.values.iter().all(|v| (0.0..=1.0).contains(v)));
                let max = m.max();
                assert!(max == 1.0 || max == 0.0);
            }
        }
        match grad_cam(&net, &store, &a, &b, "conv9") {
            Err(Error::UnknownLayer { valid, .. }) => assert_eq!(valid, vec!["conv1", "conv2", "conv3"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    /// One 3×3 same-padding convolution, global average pooling, known
    /// weights: ∂score/∂A is constant over space, so the map is computable
    /// by hand.
    #[test]
    fn one_conv_network_matches_hand_computation() {
        let channels = 2;
        let spec = VerificationNetSpec {
            trunk: TrunkSpec {
                name: "one-conv".into(),
                in_channels: 3,
                blocks: vec![ConvBlockSpec::new(channels, 3, 1, 1)],
                activation: Activation::Relu,
            },
            pool_grid: 1,
            input_resolution: 6,
        };
        let (net, mut store) = VerificationNet::new(&spec, 0).unwrap();
        let conv_w: Vec<f64> = (0..channels * 27).map(|i| ((i * 7 % 13) as f64 - 6.0) / 20.0).collect();
        let feat_w: Vec<f64> = (0..128 * channels).map(|i| ((i * 5 % 11) as f64 - 5.0) / 7.0).collect();
        let head_w: Vec<f64> = (0..128).map(|i| ((i * 3 % 7) as f64 - 3.0) / 4.0).collect();
        let names: Vec<String> = store.entries().iter().map(|e| e.name.clone()).collect();
        assert_eq!(names, ["trunk.conv1.weight", "trunk.conv1.bias", "features.weight", "features.bias", "head.weight", "head.bias"]);
        let data = store.data_mut();
        let mut off = 0;
        for (block, len) in [(&conv_w[..], conv_w.len()), (&[0.05, -0.02][..], 2), (&feat_w[..], feat_w.len())] {
            data[off..off + len].copy_from_slice(block);
            off += len;
        }
        data[off..off + 128].fill(0.01);
        off += 128;
        data[off..off + 128].copy_from_slice(&head_w);
        data[off + 128] = 0.3;

        let (x1, x2) = (image(6, 11), image(6, 12));
        // Hand computation.
        let conv = |x: &Tensor3| -> Vec<Vec<f64>> {
            (0..channels)
                .map(|c| {
                    let bias = [0.05, -0.02][c];
                    let mut plane = vec![0.0; 36];
                    for y in 0..6 {
                        for xx in 0..6 {
                            let mut acc = bias;
                            for ic in 0..3 {
                                for ki in 0..3 {
                                    for kj in 0..3 {
                                        let (iy, ix) = (y as isize + ki as isize - 1, xx as isize + kj as isize - 1);
                                        if (0..6).contains(&iy) && (0..6).contains(&ix) {
                                            acc += conv_w[((c * 3 + ic) * 3 + ki) * 3 + kj] * x.at(ic, iy as usize, ix as usize);
                                        }
                                    }
                                }
                            }
                            plane[y * 6 + xx] = acc.max(0.0);
                        }
                    }
                    plane
                })
                .collect()
        };
        let (a1, a2) = (conv(&x1), conv(&x2));
        let sig = |a: &Vec<Vec<f64>>| -> Vec<f64> {
            let mean: Vec<f64> = a.iter().map(|p| p.iter().sum::<f64>() / 36.0).collect();
            (0..128)
                .map(|k| sigmoid(0.01 + (0..channels).map(|c| feat_w[k * channels + c] * mean[c]).sum::<f64>()))
                .collect()
        };
        let (s1, s2) = (sig(&a1), sig(&a2));
        let logit = 0.3 + (0..128).map(|k| head_w[k] * (s1[k] - s2[k]).abs()).sum::<f64>();
        let score = sigmoid(logit);
        let alpha = |c: usize, mine: &[f64], other: &[f64]| -> f64 {
            // ∂score/∂A[c,y,x] is the same at every position; its spatial
            // mean is that value.
            score * (1.0 - score)
                * (0..128)
                    .map(|k| {
                        let sign = (mine[k] - other[k]).signum();
                        head_w[k] * sign * mine[k] * (1.0 - mine[k]) * feat_w[k * channels + c]
                    })
                    .sum::<f64>()
                / 36.0
        };
        let expected = |a: &Vec<Vec<f64>>, mine: &[f64], other: &[f64]| -> Vec<f64> {
            let raw: Vec<f64> = (0..36)
                .map(|i| (0..channels).map(|c| alpha(c, mine, other) * a[c][i]).sum::<f64>().max(0.0))
                .collect();
            let max = raw.iter().copied().fold(0.0, f64::max);
            raw.iter().map(|v| if max > 0.0 { v / max } else { 0.0 }).collect()
        };
        let (m1, m2) = grad_cam(&net, &store, &x1, &x2, "conv1").unwrap();
        for (got, want) in [(&m1, expected(&a1, &s1, &s2)), (&m2, expected(&a2, &s2, &s1))] {
            for (g, w) in got.values.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "{g} vs {w}");
            }
        }
    }
}
