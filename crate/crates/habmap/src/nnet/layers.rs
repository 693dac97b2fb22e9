//! Network layers with hand-written forward and backward passes.
//!
//! Each layer caches what its backward pass needs during forward; backward
//! accumulates parameter gradients and returns the input gradient.
//! Convolutions use reflect padding (border row/column mirrored without
//! repeating the edge), so a constant input stays exactly constant through
//! the whole stack — the property behind the variable-input-size contract.

use super::tensor::{Element, Param, Tensor};
use crate::rng::SeededRng;
use rand::Rng;

/// Batch-normalization epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics update rate: running ← (1−m)·running + m·batch.
pub const BN_MOMENTUM: f64 = 0.1;

/// Index into an axis of length `n` with reflect padding. Degenerate
/// single-element axes absorb every tap.
#[inline]
pub fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

/// Draw one standard normal value (Box–Muller).
fn standard_normal(rng: &mut SeededRng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Kaiming fan-in scaled normal initialization: N(0, sqrt(2 / fan_in)).
pub fn kaiming_normal<E: Element>(shape: Vec<usize>, fan_in: usize, rng: &mut SeededRng) -> Tensor<E> {
    let std = (2.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| E::from_f64(standard_normal(rng) * std))
        .collect();
    Tensor::new(shape, data)
}

// ── Convolution ─────────────────────────────────────────────────────────

/// 2-D convolution, square kernel, reflect padding of (k−1)/2, no bias
/// (normalization follows every conv in this architecture).
#[derive(Debug, Clone)]
pub struct Conv2d<E> {
    pub weight: Param<E>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    cache_input: Option<Tensor<E>>,
}

impl<E: Element> Conv2d<E> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut SeededRng,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let fan_in = in_channels * kernel * kernel;
        let weight = kaiming_normal(
            vec![out_channels, in_channels, kernel, kernel],
            fan_in,
            rng,
        );
        Self {
            weight: Param::new(weight),
            in_channels,
            out_channels,
            kernel,
            stride,
            cache_input: None,
        }
    }

    pub fn out_size(&self, s: usize) -> usize {
        let pad = (self.kernel - 1) / 2;
        (s + 2 * pad - self.kernel) / self.stride + 1
    }

    pub fn forward(&mut self, input: &Tensor<E>, train: bool) -> Tensor<E> {
        let [b, c, h, w] = input.shape() else {
            panic!("conv input must be NCHW, got {:?}", input.shape())
        };
        let (b, c, h, w) = (*b, *c, *h, *w);
        assert_eq!(c, self.in_channels, "channel mismatch");
        let pad = (self.kernel - 1) as i64 / 2;
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        let mut out = Tensor::zeros(vec![b, self.out_channels, oh, ow]);
        let wt = &self.weight.value;
        for bi in 0..b {
            for oc in 0..self.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = E::zero();
                        for ic in 0..c {
                            for ky in 0..self.kernel {
                                let iy = reflect((oy * self.stride) as i64 - pad + ky as i64, h);
                                for kx in 0..self.kernel {
                                    let ix =
                                        reflect((ox * self.stride) as i64 - pad + kx as i64, w);
                                    acc += wt.at4(oc, ic, ky, kx) * input.at4(bi, ic, iy, ix);
                                }
                            }
                        }
                        let o = out.idx4(bi, oc, oy, ox);
                        out.data_mut()[o] = acc;
                    }
                }
            }
        }
        if train {
            self.cache_input = Some(input.clone());
        }
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor<E>) -> Tensor<E> {
        let input = self
            .cache_input
            .as_ref()
            .expect("backward requires a train-mode forward");
        let [b, c, h, w] = input.shape() else { unreachable!() };
        let (b, c, h, w) = (*b, *c, *h, *w);
        let [_, _, oh, ow] = grad_out.shape() else {
            panic!("grad must be NCHW")
        };
        let (oh, ow) = (*oh, *ow);
        let pad = (self.kernel - 1) as i64 / 2;
        let mut grad_in = Tensor::zeros(vec![b, c, h, w]);
        let wt = &self.weight.value;
        let gw = &mut self.weight.grad;
        for bi in 0..b {
            for oc in 0..self.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = grad_out.at4(bi, oc, oy, ox);
                        if g == E::zero() {
                            continue;
                        }
                        for ic in 0..c {
                            for ky in 0..self.kernel {
                                let iy = reflect((oy * self.stride) as i64 - pad + ky as i64, h);
                                for kx in 0..self.kernel {
                                    let ix =
                                        reflect((ox * self.stride) as i64 - pad + kx as i64, w);
                                    let wi = wt.idx4(oc, ic, ky, kx);
                                    let xi = input.idx4(bi, ic, iy, ix);
                                    gw.data_mut()[wi] += g * input.data()[xi];
                                    grad_in.data_mut()[xi] += g * wt.data()[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }
}

// ── Batch normalization ─────────────────────────────────────────────────

/// Per-channel batch normalization with running statistics. Variance is
/// the population variance of the normalization set.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<E> {
    pub gamma: Param<E>,
    pub beta: Param<E>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub channels: usize,
    cache: Option<BnCache<E>>,
}

#[derive(Debug, Clone)]
struct BnCache<E> {
    x_hat: Tensor<E>,
    inv_std: Vec<f64>,
    /// Whether the cached forward used batch statistics.
    batch_stats: bool,
}

impl<E: Element> BatchNorm2d<E> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::new(vec![channels], vec![E::one(); channels])),
            beta: Param::new(Tensor::zeros(vec![channels])),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            channels,
            cache: None,
        }
    }

    /// `batch_stats` selects train-mode normalization (batch statistics +
    /// running-stat update). Frozen stacks pass false even during training.
    pub fn forward(&mut self, input: &Tensor<E>, batch_stats: bool, keep_cache: bool) -> Tensor<E> {
        let [b, c, h, w] = input.shape() else {
            panic!("bn input must be NCHW")
        };
        let (b, c, h, w) = (*b, *c, *h, *w);
        assert_eq!(c, self.channels, "channel mismatch");
        let n = (b * h * w) as f64;
        let mut out = Tensor::zeros(vec![b, c, h, w]);
        let mut x_hat = Tensor::zeros(vec![b, c, h, w]);
        let mut inv_stds = vec![0.0f64; c];
        for ci in 0..c {
            let (mean, var) = if batch_stats {
                let mut sum = 0.0f64;
                for bi in 0..b {
                    for y in 0..h {
                        for x in 0..w {
                            sum += input.at4(bi, ci, y, x).to_f64();
                        }
                    }
                }
                let mean = sum / n;
                let mut sq = 0.0f64;
                for bi in 0..b {
                    for y in 0..h {
                        for x in 0..w {
                            let d = input.at4(bi, ci, y, x).to_f64() - mean;
                            sq += d * d;
                        }
                    }
                }
                let var = sq / n;
                self.running_mean[ci] =
                    (1.0 - BN_MOMENTUM) * self.running_mean[ci] + BN_MOMENTUM * mean;
                self.running_var[ci] =
                    (1.0 - BN_MOMENTUM) * self.running_var[ci] + BN_MOMENTUM * var;
                (mean, var)
            } else {
                (self.running_mean[ci], self.running_var[ci])
            };
            let inv_std = 1.0 / (var + BN_EPS).sqrt();
            inv_stds[ci] = inv_std;
            let g = self.gamma.value.data()[ci];
            let be = self.beta.value.data()[ci];
            for bi in 0..b {
                for y in 0..h {
                    for x in 0..w {
                        let i = input.idx4(bi, ci, y, x);
                        let xh = E::from_f64((input.data()[i].to_f64() - mean) * inv_std);
                        x_hat.data_mut()[i] = xh;
                        out.data_mut()[i] = g * xh + be;
                    }
                }
            }
        }
        if keep_cache {
            self.cache = Some(BnCache { x_hat, inv_std: inv_stds, batch_stats });
        }
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor<E>) -> Tensor<E> {
        let cache = self.cache.as_ref().expect("backward requires cached forward");
        let [b, c, h, w] = grad_out.shape() else {
            panic!("grad must be NCHW")
        };
        let (b, c, h, w) = (*b, *c, *h, *w);
        let n = (b * h * w) as f64;
        let mut grad_in = Tensor::zeros(vec![b, c, h, w]);
        for ci in 0..c {
            let mut sum_g = 0.0f64;
            let mut sum_gx = 0.0f64;
            for bi in 0..b {
                for y in 0..h {
                    for x in 0..w {
                        let i = grad_out.idx4(bi, ci, y, x);
                        let g = grad_out.data()[i].to_f64();
                        sum_g += g;
                        sum_gx += g * cache.x_hat.data()[i].to_f64();
                    }
                }
            }
            self.gamma.grad.data_mut()[ci] += E::from_f64(sum_gx);
            self.beta.grad.data_mut()[ci] += E::from_f64(sum_g);
            let gamma = self.gamma.value.data()[ci].to_f64();
            let inv_std = cache.inv_std[ci];
            for bi in 0..b {
                for y in 0..h {
                    for x in 0..w {
                        let i = grad_out.idx4(bi, ci, y, x);
                        let g = grad_out.data()[i].to_f64();
                        let gi = if cache.batch_stats {
                            // d/dx of batch-stat normalization: the mean and
                            // variance terms feed back into every element
                            gamma
                                * inv_std
                                * (g - sum_g / n
                                    - cache.x_hat.data()[i].to_f64() * sum_gx / n)
                        } else {
                            gamma * inv_std * g
                        };
                        grad_in.data_mut()[i] = E::from_f64(gi);
                    }
                }
            }
        }
        grad_in
    }
}

// ── Activation ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Default)]
pub struct Relu<E> {
    mask: Option<Vec<bool>>,
    _marker: std::marker::PhantomData<E>,
}

impl<E: Element> Relu<E> {
    pub fn new() -> Self {
        Self { mask: None, _marker: std::marker::PhantomData }
    }

    pub fn forward(&mut self, input: &Tensor<E>, keep_cache: bool) -> Tensor<E> {
        let mut out = input.clone();
        let mut mask = keep_cache.then(|| vec![false; input.numel()]);
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            if *v > E::zero() {
                if let Some(m) = &mut mask {
                    m[i] = true;
                }
            } else {
                *v = E::zero();
            }
        }
        self.mask = mask;
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor<E>) -> Tensor<E> {
        let mask = self.mask.as_ref().expect("backward requires cached forward");
        let mut grad = grad_out.clone();
        for (g, &keep) in grad.data_mut().iter_mut().zip(mask) {
            if !keep {
                *g = E::zero();
            }
        }
        grad
    }
}

// ── Global average pooling ──────────────────────────────────────────────

/// Mean over the spatial dimensions, (B,C,H,W) → (B,C). Accumulates in
/// f64 so a constant map pools to exactly its value at any spatial size.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    in_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self { in_shape: None }
    }

    pub fn forward<E: Element>(&mut self, input: &Tensor<E>, keep_cache: bool) -> Tensor<E> {
        let [b, c, h, w] = input.shape() else {
            panic!("pool input must be NCHW")
        };
        let (b, c, h, w) = (*b, *c, *h, *w);
        let mut out = Tensor::zeros(vec![b, c]);
        let n = (h * w) as f64;
        for bi in 0..b {
            for ci in 0..c {
                let mut sum = 0.0f64;
                for y in 0..h {
                    for x in 0..w {
                        sum += input.at4(bi, ci, y, x).to_f64();
                    }
                }
                let o = out.idx2(bi, ci);
                out.data_mut()[o] = E::from_f64(sum / n);
            }
        }
        if keep_cache {
            self.in_shape = Some(input.shape().to_vec());
        }
        out
    }

    pub fn backward<E: Element>(&mut self, grad_out: &Tensor<E>) -> Tensor<E> {
        let shape = self.in_shape.as_ref().expect("backward requires cached forward");
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let mut grad_in = Tensor::zeros(shape.clone());
        let scale = 1.0 / (h * w) as f64;
        for bi in 0..b {
            for ci in 0..c {
                let g = E::from_f64(grad_out.at2(bi, ci).to_f64() * scale);
                for y in 0..h {
                    for x in 0..w {
                        let i = grad_in.idx4(bi, ci, y, x);
                        grad_in.data_mut()[i] = g;
                    }
                }
            }
        }
        grad_in
    }
}

// ── Linear ──────────────────────────────────────────────────────────────

/// Fully connected layer with bias: y = W·x + b.
#[derive(Debug, Clone)]
pub struct Linear<E> {
    pub weight: Param<E>, // (out, in)
    pub bias: Param<E>,   // (out)
    cache_input: Option<Tensor<E>>,
}

impl<E: Element> Linear<E> {
    /// Kaiming weight, zero bias.
    pub fn new(in_features: usize, out_features: usize, rng: &mut SeededRng) -> Self {
        Self {
            weight: Param::new(kaiming_normal(vec![out_features, in_features], in_features, rng)),
            bias: Param::new(Tensor::zeros(vec![out_features])),
            cache_input: None,
        }
    }

    pub fn forward(&mut self, input: &Tensor<E>, keep_cache: bool) -> Tensor<E> {
        let [b, d] = input.shape() else {
            panic!("linear input must be (B, D)")
        };
        let (b, d) = (*b, *d);
        let out_f = self.weight.value.shape()[0];
        assert_eq!(d, self.weight.value.shape()[1], "feature width mismatch");
        let mut out = Tensor::zeros(vec![b, out_f]);
        for bi in 0..b {
            for o in 0..out_f {
                let mut acc = self.bias.value.data()[o];
                for i in 0..d {
                    acc += self.weight.value.at2(o, i) * input.at2(bi, i);
                }
                let oi = out.idx2(bi, o);
                out.data_mut()[oi] = acc;
            }
        }
        if keep_cache {
            self.cache_input = Some(input.clone());
        }
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor<E>) -> Tensor<E> {
        let input = self.cache_input.as_ref().expect("backward requires cached forward");
        let [b, d] = input.shape() else { unreachable!() };
        let (b, d) = (*b, *d);
        let out_f = self.weight.value.shape()[0];
        let mut grad_in = Tensor::zeros(vec![b, d]);
        for bi in 0..b {
            for o in 0..out_f {
                let g = grad_out.at2(bi, o);
                if g == E::zero() {
                    continue;
                }
                self.bias.grad.data_mut()[o] += g;
                for i in 0..d {
                    let wi = self.weight.value.idx2(o, i);
                    self.weight.grad.data_mut()[wi] += g * input.at2(bi, i);
                    let gi = grad_in.idx2(bi, i);
                    grad_in.data_mut()[gi] += g * self.weight.value.data()[wi];
                }
            }
        }
        grad_in
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn reflect_examples() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(0, 5), 0);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(-1, 1), 0);
        assert_eq!(reflect(3, 1), 0);
        assert_eq!(reflect(-2, 3), 2);
    }

    #[test]
    fn conv_constant_input_stays_constant() {
        let mut rng = rng_from_seed(1);
        let mut conv = Conv2d::<f32>::new(2, 3, 3, 1, &mut rng);
        let small = Tensor::new(vec![1, 2, 3, 3], vec![0.7f32; 18]);
        let big = Tensor::new(vec![1, 2, 9, 9], vec![0.7f32; 162]);
        let out_s = conv.forward(&small, false);
        let out_b = conv.forward(&big, false);
        // reflect padding: every output pixel sees the same all-constant
        // window, so values match across positions and sizes
        let v = out_s.at4(0, 0, 0, 0);
        assert!(out_s.data().iter().take(9).all(|&x| x == v));
        assert_eq!(out_b.at4(0, 0, 4, 4), v);
    }

    #[test]
    fn conv_matches_manual_3x3() {
        let mut rng = rng_from_seed(2);
        let mut conv = Conv2d::<f64>::new(1, 1, 3, 1, &mut rng);
        conv.weight.value = Tensor::new(vec![1, 1, 3, 3], vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let y = conv.forward(&x, false);
        // identity kernel reproduces the input
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_stride2_shapes() {
        let mut rng = rng_from_seed(3);
        let mut conv = Conv2d::<f32>::new(1, 1, 3, 2, &mut rng);
        for (s, expect) in [(3usize, 2usize), (5, 3), (9, 5), (19, 10)] {
            let x = Tensor::zeros(vec![1, 1, s, s]);
            assert_eq!(conv.forward(&x, false).shape(), &[1, 1, expect, expect]);
        }
    }

    #[test]
    fn bn_train_normalizes_and_updates_running() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor::new(vec![2, 1, 1, 1], vec![-1.0, 1.0]);
        let y = bn.forward(&x, true, true);
        // mean 0, var 1: x_hat = x / sqrt(1 + eps)
        let expect = 1.0 / (1.0f64 + BN_EPS).sqrt();
        assert!((y.data()[1] - expect).abs() < 1e-12);
        assert!((bn.running_mean[0] - 0.0).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.9 + 0.1)).abs() < 1e-12); // 0.9*1 + 0.1*1

        // eval mode uses running stats and is deterministic
        let y1 = bn.forward(&x, false, false);
        let y2 = bn.forward(&x, false, false);
        assert_eq!(y1.data(), y2.data());
    }

    #[test]
    fn relu_masks_negatives() {
        let mut relu = Relu::<f32>::new();
        let x = Tensor::new(vec![1, 1, 1, 4], vec![-1.0, 0.0, 2.0, -0.5]);
        let y = relu.forward(&x, true);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0, 0.0]);
        let g = relu.backward(&Tensor::new(vec![1, 1, 1, 4], vec![1.0, 1.0, 1.0, 1.0]));
        assert_eq!(g.data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn pool_constant_is_size_invariant_exactly() {
        let mut pool = GlobalAvgPool::new();
        let v = 0.1f32; // not exactly representable: the f64-accumulator case
        let small = Tensor::new(vec![1, 1, 3, 3], vec![v; 9]);
        let big = Tensor::new(vec![1, 1, 19, 19], vec![v; 361]);
        assert_eq!(pool.forward(&small, false).data()[0], v);
        assert_eq!(pool.forward(&big, false).data()[0], v);
    }

    #[test]
    fn linear_zero_weights_give_zero_logits() {
        let mut rng = rng_from_seed(4);
        let mut lin = Linear::<f32>::new(3, 2, &mut rng);
        lin.weight.value.fill(0.0);
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.5, 0.5]);
        let y = lin.forward(&x, false);
        assert_eq!(y.data(), &[0.0, 0.0, 0.0, 0.0]);
    }
}
