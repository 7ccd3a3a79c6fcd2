//! Layer kernels with explicit backward passes.

use serde::{Deserialize, Serialize};

use super::params::{grad_of, Init, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor3;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, v: &mut [f64]) {
        match self {
            Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
        }
    }

    /// Multiplies `grad` by the derivative, expressed through the output.
    pub fn backward(self, output: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Relu => {
                for (g, y) in grad.iter_mut().zip(output) {
                    if *y <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for (g, y) in grad.iter_mut().zip(output) {
                    *g *= 1.0 - y * y;
                }
            }
        }
    }

    /// Variance gain for initialization.
    pub fn gain(self) -> f64 {
        match self {
            Activation::Relu => 2.0,
            Activation::Tanh => 1.0,
        }
    }
}

/// 2-D convolution over a single sample.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Range of output positions whose input tap `o*stride + k - pad` lands
/// inside `0..len`.
#[inline]
fn valid_range(len: usize, out_len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if len + pad > k {
        ((len + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        gain: f64,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = store.register(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            Init::Kaiming { fan_in, gain },
            rng,
        );
        let bias = store.register(format!("{name}.bias"), &[out_channels], Init::Zeros, rng);
        Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        let f = |n: usize| (n + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1;
        (f(height), f(width))
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor3) -> Tensor3 {
        debug_assert_eq!(x.channels(), self.in_channels);
        let (h, w) = (x.height(), x.width());
        let (oh, ow) = self.output_size(h, w);
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let weight = store.get(self.weight);
        let bias = store.get(self.bias);
        let mut y = Tensor3::zeros(self.out_channels, oh, ow);
        for oc in 0..self.out_channels {
            let out = y.channel_mut(oc);
            out.fill(bias[oc]);
            for ic in 0..self.in_channels {
                let plane = x.channel(ic);
                for ki in 0..k {
                    let (oy_lo, oy_hi) = valid_range(h, oh, ki, s, p);
                    for kj in 0..k {
                        let wv = weight[((oc * self.in_channels + ic) * k + ki) * k + kj];
                        let (ox_lo, ox_hi) = valid_range(w, ow, kj, s, p);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ki - p;
                            let row = &plane[iy * w..(iy + 1) * w];
                            let orow = &mut out[oy * ow..(oy + 1) * ow];
                            if s == 1 {
                                let base = kj as isize - p as isize;
                                let src = &row[(ox_lo as isize + base) as usize..(ox_hi as isize + base) as usize];
                                for (o, v) in orow[ox_lo..ox_hi].iter_mut().zip(src) {
                                    *o += wv * v;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    orow[ox] += wv * row[ox * s + kj - p];
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grads` (when given) and returns
    /// the input gradient (when requested).
    pub fn backward(
        &self,
        store: &ParamStore,
        x: &Tensor3,
        grad_out: &Tensor3,
        grads: Option<&mut [f64]>,
        need_input_grad: bool,
    ) -> Option<Tensor3> {
        let (h, w) = (x.height(), x.width());
        let (oh, ow) = (grad_out.height(), grad_out.width());
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let weight = store.get(self.weight);
        let mut gx = need_input_grad.then(|| Tensor3::zeros(self.in_channels, h, w));

        if let Some(grads) = grads {
            {
                let gb = grad_of(grads, store, self.bias);
                for (oc, g) in gb.iter_mut().enumerate() {
                    *g += grad_out.channel(oc).iter().sum::<f64>();
                }
            }
            let gw = grad_of(grads, store, self.weight);
            for oc in 0..self.out_channels {
                let go = grad_out.channel(oc);
                for ic in 0..self.in_channels {
                    let plane = x.channel(ic);
                    for ki in 0..k {
                        let (oy_lo, oy_hi) = valid_range(h, oh, ki, s, p);
                        for kj in 0..k {
                            let (ox_lo, ox_hi) = valid_range(w, ow, kj, s, p);
                            let mut acc = 0.0;
                            for oy in oy_lo..oy_hi {
                                let iy = oy * s + ki - p;
                                let row = &plane[iy * w..(iy + 1) * w];
                                let grow = &go[oy * ow..(oy + 1) * ow];
                                for ox in ox_lo..ox_hi {
                                    acc += grow[ox] * row[ox * s + kj - p];
                                }
                            }
                            gw[((oc * self.in_channels + ic) * k + ki) * k + kj] += acc;
                        }
                    }
                }
            }
        }

        if let Some(gx) = gx.as_mut() {
            for oc in 0..self.out_channels {
                let go = grad_out.channel(oc);
                for ic in 0..self.in_channels {
                    let gplane = gx.channel_mut(ic);
                    for ki in 0..k {
                        let (oy_lo, oy_hi) = valid_range(h, oh, ki, s, p);
                        for kj in 0..k {
                            let wv = weight[((oc * self.in_channels + ic) * k + ki) * k + kj];
                            let (ox_lo, ox_hi) = valid_range(w, ow, kj, s, p);
                            for oy in oy_lo..oy_hi {
                                let iy = oy * s + ki - p;
                                let grow = &go[oy * ow..(oy + 1) * ow];
                                let row = &mut gplane[iy * w..(iy + 1) * w];
                                for ox in ox_lo..ox_hi {
                                    row[ox * s + kj - p] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

/// Affine map `y = W x + b` with `W` stored row-major as `out × in`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_features: usize, out_features: usize, gain: f64, rng: &mut Rng) -> Self {
        let weight = store.register(
            format!("{name}.weight"),
            &[out_features, in_features],
            Init::Kaiming { fan_in: in_features, gain },
            rng,
        );
        let bias = store.register(format!("{name}.bias"), &[out_features], Init::Zeros, rng);
        Linear {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_features);
        let w = store.get(self.weight);
        let b = store.get(self.bias);
        (0..self.out_features)
            .map(|o| {
                let row = &w[o * self.in_features..(o + 1) * self.in_features];
                b[o] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
            })
            .collect()
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        x: &[f64],
        grad_out: &[f64],
        grads: Option<&mut [f64]>,
        need_input_grad: bool,
    ) -> Option<Vec<f64>> {
        if let Some(grads) = grads {
            {
                let gb = grad_of(grads, store, self.bias);
                for (g, d) in gb.iter_mut().zip(grad_out) {
                    *g += d;
                }
            }
            let gw = grad_of(grads, store, self.weight);
            for (o, d) in grad_out.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * self.in_features..(o + 1) * self.in_features];
                for (g, v) in row.iter_mut().zip(x) {
                    *g += d * v;
                }
            }
        }
        need_input_grad.then(|| {
            let w = store.get(self.weight);
            let mut gx = vec![0.0; self.in_features];
            for (o, d) in grad_out.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &w[o * self.in_features..(o + 1) * self.in_features];
                for (g, a) in gx.iter_mut().zip(row) {
                    *g += d * a;
                }
            }
            gx
        })
    }
}

#[inline]
fn window(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = i * input / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
}

/// Adaptive average pooling to `out × out`, windows as in the common
/// deep-learning frameworks (floor start, ceil end).
pub fn adaptive_avg_pool(x: &Tensor3, out: usize) -> Tensor3 {
    let (h, w) = (x.height(), x.width());
    let mut y = Tensor3::zeros(x.channels(), out, out);
    for c in 0..x.channels() {
        let plane = x.channel(c);
        let dst = y.channel_mut(c);
        for oy in 0..out {
            let (y0, y1) = window(oy, h, out);
            for ox in 0..out {
                let (x0, x1) = window(ox, w, out);
                let mut sum = 0.0;
                for iy in y0..y1 {
                    sum += plane[iy * w + x0..iy * w + x1].iter().sum::<f64>();
                }
                dst[oy * out + ox] = sum / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    y
}

pub fn adaptive_avg_pool_backward(grad_out: &Tensor3, height: usize, width: usize) -> Tensor3 {
    let out = grad_out.height();
    let mut gx = Tensor3::zeros(grad_out.channels(), height, width);
    for c in 0..grad_out.channels() {
        let go = grad_out.channel(c);
        let dst = gx.channel_mut(c);
        for oy in 0..out {
            let (y0, y1) = window(oy, height, out);
            for ox in 0..out {
                let (x0, x1) = window(ox, width, out);
                let g = go[oy * out + ox] / ((y1 - y0) * (x1 - x0)) as f64;
                for iy in y0..y1 {
                    for v in &mut dst[iy * width + x0..iy * width + x1] {
                        *v += g;
                    }
                }
            }
        }
    }
    gx
}

/// Adaptive max pooling; also returns the flat plane index of each winner
/// (first maximum on ties).
pub fn adaptive_max_pool(x: &Tensor3, out: usize) -> (Tensor3, Vec<usize>) {
    let (h, w) = (x.height(), x.width());
    let mut y = Tensor3::zeros(x.channels(), out, out);
    let mut argmax = Vec::with_capacity(x.channels() * out * out);
    for c in 0..x.channels() {
        let plane = x.channel(c);
        let dst = y.channel_mut(c);
        for oy in 0..out {
            let (y0, y1) = window(oy, h, out);
            for ox in 0..out {
                let (x0, x1) = window(ox, w, out);
                let mut best = (f64::NEG_INFINITY, 0);
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let v = plane[iy * w + ix];
                        if v > best.0 {
                            best = (v, iy * w + ix);
                        }
                    }
                }
                dst[oy * out + ox] = best.0;
                argmax.push(best.1);
            }
        }
    }
    (y, argmax)
}

pub fn adaptive_max_pool_backward(grad_out: &Tensor3, argmax: &[usize], height: usize, width: usize) -> Tensor3 {
    let per = grad_out.plane_len();
    let mut gx = Tensor3::zeros(grad_out.channels(), height, width);
    for c in 0..grad_out.channels() {
        let go = grad_out.channel(c);
        let dst = gx.channel_mut(c);
        for (i, g) in go.iter().enumerate() {
            dst[argmax[c * per + i]] += g;
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor3 {
        let data = (0..c * h * w).map(|i| ((i * 37) % 11) as f64 * 0.1 - 0.5).collect();
        Tensor3::from_vec(c, h, w, data).unwrap()
    }

    /// Direct definition of a strided, zero-padded convolution.
    fn naive_conv(conv: &Conv2d, store: &ParamStore, x: &Tensor3) -> Tensor3 {
        let (oh, ow) = conv.output_size(x.height(), x.width());
        let w = store.get(conv.weight);
        let b = store.get(conv.bias);
        let k = conv.kernel;
        let mut y = Tensor3::zeros(conv.out_channels, oh, ow);
        for oc in 0..conv.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[oc];
                    for ic in 0..conv.in_channels {
                        for ki in 0..k {
                            for kj in 0..k {
                                let iy = (oy * conv.stride + ki) as isize - conv.padding as isize;
                                let ix = (ox * conv.stride + kj) as isize - conv.padding as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.height() && (ix as usize) < x.width() {
                                    acc += w[((oc * conv.in_channels + ic) * k + ki) * k + kj]
                                        * x.at(ic, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    y.channel_mut(oc)[oy * ow + ox] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_definition() {
        let mut rng = rng_for(1, &[]);
        for (k, s, p, h, w) in [(3, 1, 1, 7, 6), (3, 2, 1, 9, 8), (5, 2, 2, 11, 10), (1, 1, 0, 4, 4), (3, 3, 0, 10, 7)] {
            let mut store = ParamStore::new();
            let conv = Conv2d::new(&mut store, "c", 2, 3, k, s, p, 2.0, &mut rng);
            store.get_mut(conv.bias).copy_from_slice(&[0.1, -0.2, 0.3]);
            let x = ramp(2, h, w);
            let fast = conv.forward(&store, &x);
            let slow = naive_conv(&conv, &store, &x);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = rng_for(2, &[]);
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, "c", 2, 2, 3, 2, 1, 2.0, &mut rng);
        let x = ramp(2, 7, 6);
        // Loss: weighted sum of outputs.
        let y = conv.forward(&store, &x);
        let weights: Vec<f64> = (0..y.data().len()).map(|i| (i as f64 * 0.3).sin()).collect();
        let gy = Tensor3::from_vec(y.channels(), y.height(), y.width(), weights.clone()).unwrap();
        let loss = |st: &ParamStore, xx: &Tensor3| -> f64 {
            conv.forward(st, xx).data().iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let mut grads = store.zeros_like();
        let gx = conv.backward(&store, &x, &gy, Some(&mut grads), true).unwrap();
        let h = 1e-6;
        for i in 0..store.len() {
            let mut sp = store.clone();
            sp.data_mut()[i] += h;
            let mut sm = store.clone();
            sm.data_mut()[i] -= h;
            let fd = (loss(&sp, &x) - loss(&sm, &x)) / (2.0 * h);
            assert!((fd - grads[i]).abs() < 1e-7, "param {i}: {fd} vs {}", grads[i]);
        }
        for i in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&store, &xp) - loss(&store, &xm)) / (2.0 * h);
            assert!((fd - gx.data()[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = rng_for(3, &[]);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "fc", 5, 3, 1.0, &mut rng);
        let x = vec![0.3, -0.1, 0.7, 0.2, -0.9];
        let gy = vec![1.0, -2.0, 0.5];
        let loss = |st: &ParamStore, xx: &[f64]| -> f64 { lin.forward(st, xx).iter().zip(&gy).map(|(a, b)| a * b).sum() };
        let mut grads = store.zeros_like();
        let gx = lin.backward(&store, &x, &gy, Some(&mut grads), true).unwrap();
        let h = 1e-6;
        for i in 0..store.len() {
            let mut sp = store.clone();
            sp.data_mut()[i] += h;
            let mut sm = store.clone();
            sm.data_mut()[i] -= h;
            assert!(((loss(&sp, &x) - loss(&sm, &x)) / (2.0 * h) - grads[i]).abs() < 1e-8);
        }
        for i in 0..5 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            assert!(((loss(&store, &xp) - loss(&store, &xm)) / (2.0 * h) - gx[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn adaptive_pools_partition_like_frameworks() {
        let x = ramp(1, 7, 7);
        let avg = adaptive_avg_pool(&x, 5);
        // Window for output 1 of 5 over 7 inputs is [1, 3).
        let expect = (x.at(0, 1, 1) + x.at(0, 1, 2) + x.at(0, 2, 1) + x.at(0, 2, 2)) / 4.0;
        assert!((avg.at(0, 1, 1) - expect).abs() < 1e-15);
        let same = adaptive_avg_pool(&x, 7);
        assert_eq!(same.data(), x.data());
        let (mx, arg) = adaptive_max_pool(&x, 7);
        assert_eq!(mx.data(), x.data());
        assert_eq!(arg, (0..49).collect::<Vec<_>>());
    }

    #[test]
    fn pool_backward_conserves_gradient_mass() {
        let x = ramp(2, 9, 6);
        let g = Tensor3::from_vec(2, 5, 5, (0..50).map(|i| i as f64).collect()).unwrap();
        let ga = adaptive_avg_pool_backward(&g, 9, 6);
        // Overlapping windows duplicate mass; check against the explicit adjoint.
        let avg = adaptive_avg_pool(&x, 5);
        let lhs: f64 = avg.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ga.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
        let (mx, arg) = adaptive_max_pool(&x, 5);
        let gm = adaptive_max_pool_backward(&g, &arg, 9, 6);
        let lhs: f64 = mx.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(gm.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
