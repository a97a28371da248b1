//! Network building blocks with explicit forward/backward passes: padded
//! 2D convolutions, SiLU, global-pooling bias layers, the pooled linear
//! value projection, and stable softmax/softplus heads.
//!
//! All activations are `(channels, height, width)` arrays in standard
//! layout; the hot loops run on raw slices.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Stride-1 convolution with same padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Array4<f64>, // (out, in, kh, kw)
    pub bias: Array1<f64>,
}

impl Conv2d {
    pub fn zeros(out_c: usize, in_c: usize, kh: usize, kw: usize) -> Self {
        Self {
            weight: Array4::zeros((out_c, in_c, kh, kw)),
            bias: Array1::zeros(out_c),
        }
    }

    /// He-style scaled-uniform fan-in initialization; `scale` shrinks output
    /// layers toward near-uniform initial predictions.
    pub fn init(
        rng: &mut ChaCha8Rng,
        out_c: usize,
        in_c: usize,
        kh: usize,
        kw: usize,
        scale: f64,
    ) -> Self {
        let fan_in = (in_c * kh * kw) as f64;
        let limit = scale * (6.0 / fan_in).sqrt();
        let weight = Array4::from_shape_simple_fn((out_c, in_c, kh, kw), || {
            rng.random_range(-limit..limit)
        });
        Self {
            weight,
            bias: Array1::zeros(out_c),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (co, kh, kw) = (
            self.weight.shape()[0],
            self.weight.shape()[2],
            self.weight.shape()[3],
        );
        debug_assert_eq!(ci, self.weight.shape()[1]);
        let (ph, pw) = (kh as isize / 2, kw as isize / 2);

        let xs = x.as_slice().expect("standard layout");
        let ws = self.weight.as_slice().expect("standard layout");
        let mut out = Array3::zeros((co, h, w));
        {
            let os = out.as_slice_mut().unwrap();
            for o in 0..co {
                let plane = &mut os[o * h * w..(o + 1) * h * w];
                plane.fill(self.bias[o]);
                for i in 0..ci {
                    for dkh in 0..kh {
                        let dy = dkh as isize - ph;
                        for dkw in 0..kw {
                            let dx = dkw as isize - pw;
                            let wv = ws[((o * ci + i) * kh + dkh) * kw + dkw];
                            if wv == 0.0 {
                                continue;
                            }
                            let y0 = (-dy).max(0) as usize;
                            let y1 = (h as isize - dy).min(h as isize) as usize;
                            let x0 = (-dx).max(0) as usize;
                            let x1 = (w as isize - dx).min(w as isize) as usize;
                            for y in y0..y1 {
                                let src =
                                    &xs[(i * h + (y as isize + dy) as usize) * w..][..w];
                                let dst = &mut plane[y * w..(y + 1) * w];
                                for xx in x0..x1 {
                                    dst[xx] += wv * src[(xx as isize + dx) as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight/bias gradients into `grad` and returns the input
    /// gradient.
    pub fn backward(
        &self,
        x: &Array3<f64>,
        grad_out: &Array3<f64>,
        grad: &mut Conv2d,
    ) -> Array3<f64> {
        let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (co, kh, kw) = (
            self.weight.shape()[0],
            self.weight.shape()[2],
            self.weight.shape()[3],
        );
        let (ph, pw) = (kh as isize / 2, kw as isize / 2);

        let xs = x.as_slice().unwrap();
        let gos = grad_out.as_slice().unwrap();
        let ws = self.weight.as_slice().unwrap();
        let mut grad_x = Array3::zeros((ci, h, w));
        let gxs = grad_x.as_slice_mut().unwrap();
        let gws = grad.weight.as_slice_mut().unwrap();

        for o in 0..co {
            let go_plane = &gos[o * h * w..(o + 1) * h * w];
            grad.bias[o] += go_plane.iter().sum::<f64>();
            for i in 0..ci {
                for dkh in 0..kh {
                    let dy = dkh as isize - ph;
                    for dkw in 0..kw {
                        let dx = dkw as isize - pw;
                        let widx = ((o * ci + i) * kh + dkh) * kw + dkw;
                        let wv = ws[widx];
                        let y0 = (-dy).max(0) as usize;
                        let y1 = (h as isize - dy).min(h as isize) as usize;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize) as usize;
                        let mut wsum = 0.0;
                        for y in y0..y1 {
                            let go_row = &go_plane[y * w..(y + 1) * w];
                            let src_base = (i * h + (y as isize + dy) as usize) * w;
                            for xx in x0..x1 {
                                let xi = src_base + (xx as isize + dx) as usize;
                                wsum += go_row[xx] * xs[xi];
                                gxs[xi] += wv * go_row[xx];
                            }
                        }
                        gws[widx] += wsum;
                    }
                }
            }
        }
        grad_x
    }
}

pub fn silu(u: f64) -> f64 {
    u / (1.0 + (-u).exp())
}

fn silu_grad(u: f64) -> f64 {
    let s = 1.0 / (1.0 + (-u).exp());
    s * (1.0 + u * (1.0 - s))
}

/// Elementwise SiLU of a feature map.
pub fn silu_forward(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(silu)
}

/// Input gradient of SiLU given the pre-activation `x`.
pub fn silu_backward(x: &Array3<f64>, grad_out: &Array3<f64>) -> Array3<f64> {
    let mut g = grad_out.clone();
    g.zip_mut_with(x, |gv, &u| *gv *= silu_grad(u));
    g
}

/// Channel-wise (mean, max) pooling projected to a per-channel additive
/// bias: `y = x + W [mean(x); max(x)] + b`.
#[derive(Debug, Clone)]
pub struct GlobalPoolBias {
    pub weight: Array2<f64>, // (C, 2C)
    pub bias: Array1<f64>,
}

pub struct PoolBiasCache {
    pooled: Vec<f64>,
    argmax: Vec<usize>,
}

impl GlobalPoolBias {
    pub fn zeros(channels: usize) -> Self {
        Self {
            weight: Array2::zeros((channels, 2 * channels)),
            bias: Array1::zeros(channels),
        }
    }

    pub fn init(rng: &mut ChaCha8Rng, channels: usize) -> Self {
        let limit = (6.0 / (2 * channels) as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((channels, 2 * channels), || {
                rng.random_range(-limit..limit)
            }),
            bias: Array1::zeros(channels),
        }
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, PoolBiasCache) {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let xs = x.as_slice().unwrap();
        let area = h * w;
        let mut pooled = vec![0.0; 2 * c];
        let mut argmax = vec![0; c];
        for ch in 0..c {
            let plane = &xs[ch * area..(ch + 1) * area];
            let mut best = f64::NEG_INFINITY;
            let mut best_i = 0;
            let mut sum = 0.0;
            for (i, &v) in plane.iter().enumerate() {
                sum += v;
                if v > best {
                    best = v;
                    best_i = i;
                }
            }
            pooled[ch] = sum / area as f64;
            pooled[c + ch] = best;
            argmax[ch] = best_i;
        }

        let mut out = x.clone();
        {
            let os = out.as_slice_mut().unwrap();
            for ch in 0..c {
                let mut b = self.bias[ch];
                for j in 0..2 * c {
                    b += self.weight[(ch, j)] * pooled[j];
                }
                for v in &mut os[ch * area..(ch + 1) * area] {
                    *v += b;
                }
            }
        }
        (out, PoolBiasCache { pooled, argmax })
    }

    pub fn backward(
        &self,
        cache: &PoolBiasCache,
        grad_out: &Array3<f64>,
        grad: &mut GlobalPoolBias,
    ) -> Array3<f64> {
        let (c, h, w) = (
            grad_out.shape()[0],
            grad_out.shape()[1],
            grad_out.shape()[2],
        );
        let area = h * w;
        let gos = grad_out.as_slice().unwrap();

        // Per-channel bias gradient is the plane sum.
        let mut g_bias_vec = vec![0.0; c];
        for ch in 0..c {
            g_bias_vec[ch] = gos[ch * area..(ch + 1) * area].iter().sum();
        }
        for ch in 0..c {
            grad.bias[ch] += g_bias_vec[ch];
            for j in 0..2 * c {
                grad.weight[(ch, j)] += g_bias_vec[ch] * cache.pooled[j];
            }
        }

        let mut grad_x = grad_out.clone();
        {
            let gxs = grad_x.as_slice_mut().unwrap();
            for ch in 0..c {
                let mut dp_mean = 0.0;
                let mut dp_max = 0.0;
                for (i, &gb) in g_bias_vec.iter().enumerate() {
                    dp_mean += self.weight[(i, ch)] * gb;
                    dp_max += self.weight[(i, c + ch)] * gb;
                }
                let plane = &mut gxs[ch * area..(ch + 1) * area];
                let mean_share = dp_mean / area as f64;
                for v in plane.iter_mut() {
                    *v += mean_share;
                }
                plane[cache.argmax[ch]] += dp_max;
            }
        }
        grad_x
    }
}

/// Dense projection used after value-head pooling.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Array2<f64>, // (out, in)
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn init(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize, scale: f64) -> Self {
        let limit = scale * (6.0 / in_dim as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((out_dim, in_dim), || {
                rng.random_range(-limit..limit)
            }),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn forward(&self, v: &[f64]) -> Vec<f64> {
        self.weight
            .rows()
            .into_iter()
            .zip(self.bias.iter())
            .map(|(row, &b)| b + row.iter().zip(v).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    pub fn backward(&self, v: &[f64], grad_out: &[f64], grad: &mut Linear) -> Vec<f64> {
        let mut grad_v = vec![0.0; v.len()];
        for (o, &go) in grad_out.iter().enumerate() {
            grad.bias[o] += go;
            for (j, &x) in v.iter().enumerate() {
                grad.weight[(o, j)] += go * x;
                grad_v[j] += self.weight[(o, j)] * go;
            }
        }
        grad_v
    }
}

/// Channel-wise global average and max pooling to a `2C` vector.
pub fn global_avg_max_pool(x: &Array3<f64>) -> (Vec<f64>, Vec<usize>) {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let area = h * w;
    let xs = x.as_slice().unwrap();
    let mut pooled = vec![0.0; 2 * c];
    let mut argmax = vec![0; c];
    for ch in 0..c {
        let plane = &xs[ch * area..(ch + 1) * area];
        let mut best = f64::NEG_INFINITY;
        let mut best_i = 0;
        let mut sum = 0.0;
        for (i, &v) in plane.iter().enumerate() {
            sum += v;
            if v > best {
                best = v;
                best_i = i;
            }
        }
        pooled[ch] = sum / area as f64;
        pooled[c + ch] = best;
        argmax[ch] = best_i;
    }
    (pooled, argmax)
}

pub fn global_avg_max_pool_backward(
    grad_pooled: &[f64],
    argmax: &[usize],
    shape: (usize, usize, usize),
) -> Array3<f64> {
    let (c, h, w) = shape;
    let area = h * w;
    let mut grad_x = Array3::zeros((c, h, w));
    let gxs = grad_x.as_slice_mut().unwrap();
    for ch in 0..c {
        let mean_share = grad_pooled[ch] / area as f64;
        let plane = &mut gxs[ch * area..(ch + 1) * area];
        for v in plane.iter_mut() {
            *v += mean_share;
        }
        plane[argmax[ch]] += grad_pooled[c + ch];
    }
    grad_x
}

/// Numerically stable softplus.
pub fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

pub fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Softmax over unmasked logits; masked entries get probability zero.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    debug_assert_eq!(logits.len(), mask.len());
    let mut max = f64::NEG_INFINITY;
    for (l, &m) in logits.iter().zip(mask) {
        if m && *l > max {
            max = *l;
        }
    }
    let mut out = vec![0.0; logits.len()];
    if !max.is_finite() {
        return out;
    }
    let mut sum = 0.0;
    for i in 0..logits.len() {
        if mask[i] {
            let e = (logits[i] - max).exp();
            out[i] = e;
            sum += e;
        }
    }
    for v in &mut out {
        *v /= sum;
    }
    out
}
