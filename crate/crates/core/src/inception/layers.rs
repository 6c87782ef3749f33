//! Building blocks with hand-written forward and backward passes.
//!
//! Activations are stored per sample as row-major `[channels, time]` slices;
//! batches are those slices laid end to end.

use rand::Rng as _;

use super::Real;
use crate::seeds::Rng;

/// A parameter tensor with its gradient accumulator and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub value: Vec<F>,
    pub grad: Vec<F>,
    pub(crate) m: Vec<F>,
    pub(crate) v: Vec<F>,
}

impl<F: Real> Param<F> {
    pub fn new(value: Vec<F>) -> Self {
        let n = value.len();
        Self {
            value,
            grad: vec![F::zero(); n],
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![F::zero(); n])
    }

    /// He-uniform: `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
    pub fn he_uniform(n: usize, fan_in: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / fan_in as f64).sqrt();
        Self::new(
            (0..n)
                .map(|_| F::from_f64(rng.random_range(-limit..limit)).unwrap())
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = F::zero());
    }

    pub fn reset_moments(&mut self) {
        self.m.iter_mut().for_each(|g| *g = F::zero());
        self.v.iter_mut().for_each(|g| *g = F::zero());
    }

    pub(crate) fn adam_step(&mut self, lr: F, b1: F, b2: F, eps: F, bc1: F, bc2: F) {
        let one = F::one();
        for i in 0..self.value.len() {
            let g = self.grad[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            self.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// `y += a * x`
#[inline]
fn axpy<F: Real>(y: &mut [F], a: F, x: &[F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes
/// while staying deterministic.
#[inline]
pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [F::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = F::zero();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += *x * *y;
    }
    let s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    s + tail
}

/// 1-D convolution with "same" padding (left `(k - 1) / 2`, right the rest)
/// and no bias; weights are `[out, in, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<F> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub weight: Param<F>,
}

impl<F: Real> Conv1d<F> {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut Rng) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            weight: Param::he_uniform(out_ch * in_ch * kernel, in_ch * kernel, rng),
        }
    }

    fn pad_left(&self) -> isize {
        ((self.kernel - 1) / 2) as isize
    }

    /// Valid output range for tap `j`: `(t_lo, t_hi, input offset)`.
    #[inline]
    fn tap_range(&self, j: usize, t: usize) -> (usize, usize, isize) {
        let off = j as isize - self.pad_left();
        let lo = (-off).max(0) as usize;
        let hi = (t as isize - off).min(t as isize).max(0) as usize;
        (lo.min(hi), hi, off)
    }

    /// Writes `[out, t]` into `y` for one `[in, t]` sample `x`.
    pub fn forward(&self, x: &[F], t: usize, y: &mut [F]) {
        debug_assert_eq!(x.len(), self.in_ch * t);
        debug_assert_eq!(y.len(), self.out_ch * t);
        y.iter_mut().for_each(|v| *v = F::zero());
        let k = self.kernel;
        for o in 0..self.out_ch {
            let yo = &mut y[o * t..(o + 1) * t];
            for i in 0..self.in_ch {
                let xi = &x[i * t..(i + 1) * t];
                let w = &self.weight.value[(o * self.in_ch + i) * k..(o * self.in_ch + i + 1) * k];
                for (j, &wj) in w.iter().enumerate() {
                    let (lo, hi, off) = self.tap_range(j, t);
                    let xs = (lo as isize + off) as usize;
                    axpy(&mut yo[lo..hi], wj, &xi[xs..xs + (hi - lo)]);
                }
            }
        }
    }

    /// Accumulates the input gradient into `dx` (when given) and, when
    /// `accumulate` is set, the weight gradient.
    pub fn backward(&mut self, x: &[F], dy: &[F], t: usize, dx: Option<&mut [F]>, accumulate: bool) {
        let k = self.kernel;
        if accumulate {
            for o in 0..self.out_ch {
                let dyo = &dy[o * t..(o + 1) * t];
                for i in 0..self.in_ch {
                    let xi = &x[i * t..(i + 1) * t];
                    let base = (o * self.in_ch + i) * k;
                    for j in 0..k {
                        let (lo, hi, off) = self.tap_range(j, t);
                        let xs = (lo as isize + off) as usize;
                        self.weight.grad[base + j] += dot(&dyo[lo..hi], &xi[xs..xs + (hi - lo)]);
                    }
                }
            }
        }
        if let Some(dx) = dx {
            for o in 0..self.out_ch {
                let dyo = &dy[o * t..(o + 1) * t];
                for i in 0..self.in_ch {
                    let dxi = &mut dx[i * t..(i + 1) * t];
                    let w = &self.weight.value[(o * self.in_ch + i) * k..(o * self.in_ch + i + 1) * k];
                    for (j, &wj) in w.iter().enumerate() {
                        let (lo, hi, off) = self.tap_range(j, t);
                        let xs = (lo as isize + off) as usize;
                        axpy(&mut dxi[xs..xs + (hi - lo)], wj, &dyo[lo..hi]);
                    }
                }
            }
        }
    }
}

/// Width-3, stride-1 max pooling with "same" output length; border windows
/// only consider in-range samples.
pub fn maxpool3_forward<F: Real>(x: &[F], channels: usize, t: usize, y: &mut [F]) {
    for c in 0..channels {
        let xr = &x[c * t..(c + 1) * t];
        let yr = &mut y[c * t..(c + 1) * t];
        for s in 0..t {
            let lo = s.saturating_sub(1);
            let hi = (s + 1).min(t - 1);
            let mut m = xr[lo];
            for &v in &xr[lo + 1..=hi] {
                if v > m {
                    m = v;
                }
            }
            yr[s] = m;
        }
    }
}

/// Index of the first maximal sample of the width-3 window centred on `s`.
#[inline]
pub fn maxpool3_argmax<F: Real>(row: &[F], s: usize) -> usize {
    let lo = s.saturating_sub(1);
    let hi = (s + 1).min(row.len() - 1);
    let mut arg = lo;
    for p in lo + 1..=hi {
        if row[p] > row[arg] {
            arg = p;
        }
    }
    arg
}

/// Routes each output gradient to the first maximal input of its window.
pub fn maxpool3_backward<F: Real>(x: &[F], dy: &[F], channels: usize, t: usize, dx: &mut [F]) {
    for c in 0..channels {
        let xr = &x[c * t..(c + 1) * t];
        let dyr = &dy[c * t..(c + 1) * t];
        let dxr = &mut dx[c * t..(c + 1) * t];
        for s in 0..t {
            dxr[maxpool3_argmax(xr, s)] += dyr[s];
        }
    }
}

/// Per-channel batch normalization over batch and time.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<F> {
    pub channels: usize,
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
    pub momentum: f64,
    pub eps: f64,
}

/// What the backward pass of a batch-norm layer needs.
#[derive(Debug, Clone)]
pub struct BatchNormCache<F> {
    /// Normalized activations, same layout as the input batch.
    pub xhat: Vec<F>,
    /// `1 / sqrt(var + eps)` per channel (batch or running statistics).
    pub inv_std: Vec<F>,
    pub training: bool,
}

impl<F: Real> BatchNorm<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(vec![F::one(); channels]),
            beta: Param::zeros(channels),
            running_mean: vec![F::zero(); channels],
            running_var: vec![F::one(); channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Normalizes `x` (`n` samples of `[channels, t]`) in place of `y`.
    /// In training mode batch statistics are used and the running
    /// statistics updated.
    pub fn forward(&mut self, x: &[F], n: usize, t: usize, training: bool, y: &mut [F]) -> BatchNormCache<F> {
        let c = self.channels;
        let eps = F::from_f64(self.eps).unwrap();
        let mut inv_std = vec![F::zero(); c];
        let mut mean = vec![F::zero(); c];
        if training {
            let m = (n * t) as f64;
            for ch in 0..c {
                let mut s = 0.0f64;
                for b in 0..n {
                    let row = &x[(b * c + ch) * t..(b * c + ch + 1) * t];
                    s += row.iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
                }
                let mu = s / m;
                let mut ss = 0.0f64;
                for b in 0..n {
                    let row = &x[(b * c + ch) * t..(b * c + ch + 1) * t];
                    ss += row
                        .iter()
                        .map(|v| {
                            let d = v.to_f64().unwrap() - mu;
                            d * d
                        })
                        .sum::<f64>();
                }
                let var = ss / m;
                mean[ch] = F::from_f64(mu).unwrap();
                inv_std[ch] = F::from_f64(1.0 / (var + self.eps).sqrt()).unwrap();
                let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
                let mo = self.momentum;
                self.running_mean[ch] =
                    F::from_f64((1.0 - mo) * self.running_mean[ch].to_f64().unwrap() + mo * mu).unwrap();
                self.running_var[ch] =
                    F::from_f64((1.0 - mo) * self.running_var[ch].to_f64().unwrap() + mo * unbiased)
                        .unwrap();
            }
        } else {
            for ch in 0..c {
                mean[ch] = self.running_mean[ch];
                inv_std[ch] = F::one() / (self.running_var[ch] + eps).sqrt();
            }
        }
        let mut xhat = vec![F::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let r = (b * c + ch) * t..(b * c + ch + 1) * t;
                let (g, be, mu, is) = (self.gamma.value[ch], self.beta.value[ch], mean[ch], inv_std[ch]);
                for ((xh, yv), &xv) in xhat[r.clone()].iter_mut().zip(&mut y[r.clone()]).zip(&x[r]) {
                    *xh = (xv - mu) * is;
                    *yv = g * *xh + be;
                }
            }
        }
        BatchNormCache {
            xhat,
            inv_std,
            training,
        }
    }

    /// Returns the input gradient; accumulates `gamma`/`beta` gradients when
    /// `accumulate` is set.
    pub fn backward(&mut self, cache: &BatchNormCache<F>, dy: &[F], n: usize, t: usize, accumulate: bool) -> Vec<F> {
        let c = self.channels;
        let mut dx = vec![F::zero(); dy.len()];
        for ch in 0..c {
            let mut sum_dy = F::zero();
            let mut sum_dy_xhat = F::zero();
            for b in 0..n {
                let r = (b * c + ch) * t..(b * c + ch + 1) * t;
                sum_dy += dy[r.clone()].iter().copied().fold(F::zero(), |a, v| a + v);
                sum_dy_xhat += dot(&dy[r.clone()], &cache.xhat[r]);
            }
            if accumulate {
                self.gamma.grad[ch] += sum_dy_xhat;
                self.beta.grad[ch] += sum_dy;
            }
            let g = self.gamma.value[ch];
            let is = cache.inv_std[ch];
            if cache.training {
                let m = F::from_usize(n * t).unwrap();
                let mean_dy = sum_dy / m;
                let mean_dy_xhat = sum_dy_xhat / m;
                for b in 0..n {
                    let r = (b * c + ch) * t..(b * c + ch + 1) * t;
                    for ((d, &dyv), &xh) in dx[r.clone()].iter_mut().zip(&dy[r.clone()]).zip(&cache.xhat[r]) {
                        *d = g * is * (dyv - mean_dy - xh * mean_dy_xhat);
                    }
                }
            } else {
                for b in 0..n {
                    let r = (b * c + ch) * t..(b * c + ch + 1) * t;
                    for (d, &dyv) in dx[r.clone()].iter_mut().zip(&dy[r]) {
                        *d = g * is * dyv;
                    }
                }
            }
        }
        dx
    }
}

/// Fully connected layer, weights `[out, in]`, with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Param<F>,
    pub bias: Param<F>,
}

impl<F: Real> Dense<F> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: Param::he_uniform(in_dim * out_dim, in_dim, rng),
            bias: Param::zeros(out_dim),
        }
    }

    pub fn forward(&self, x: &[F], y: &mut [F]) {
        for o in 0..self.out_dim {
            y[o] = self.bias.value[o] + dot(&self.weight.value[o * self.in_dim..(o + 1) * self.in_dim], x);
        }
    }

    pub fn backward(&mut self, x: &[F], dy: &[F], dx: &mut [F], accumulate: bool) {
        for o in 0..self.out_dim {
            let w = &self.weight.value[o * self.in_dim..(o + 1) * self.in_dim];
            axpy(dx, dy[o], w);
            if accumulate {
                self.bias.grad[o] += dy[o];
                axpy(&mut self.weight.grad[o * self.in_dim..(o + 1) * self.in_dim], dy[o], x);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng;

    #[test]
    fn conv_same_padding_matches_direct_sum() {
        let mut r = rng(3);
        for &k in &[1usize, 2, 3, 4, 9] {
            let conv = Conv1d::<f64>::new(2, 3, k, &mut r);
            let t = 11;
            let x: Vec<f64> = (0..2 * t).map(|i| (i as f64 * 0.7).sin()).collect();
            let mut y = vec![0.0; 3 * t];
            conv.forward(&x, t, &mut y);
            let pl = ((k - 1) / 2) as isize;
            for o in 0..3 {
                for s in 0..t {
                    let mut acc = 0.0;
                    for i in 0..2 {
                        for j in 0..k {
                            let p = s as isize + j as isize - pl;
                            if p >= 0 && (p as usize) < t {
                                acc += conv.weight.value[(o * 2 + i) * k + j] * x[i * t + p as usize];
                            }
                        }
                    }
                    assert!((y[o * t + s] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn maxpool_edges() {
        let x = [1.0f64, 5.0, 2.0, 2.0, 7.0];
        let mut y = [0.0; 5];
        maxpool3_forward(&x, 1, 5, &mut y);
        assert_eq!(y, [5.0, 5.0, 5.0, 7.0, 7.0]);
        let mut dx = [0.0; 5];
        maxpool3_backward(&x, &[1.0; 5], 1, 5, &mut dx);
        assert_eq!(dx, [0.0, 3.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| i as f64 * 0.1).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_training_output_is_standardized() {
        let mut bn = BatchNorm::<f64>::new(2);
        let x: Vec<f64> = (0..3 * 2 * 10).map(|i| (i as f64 * 1.3).sin() * 4.0 + 2.0).collect();
        let mut y = vec![0.0; x.len()];
        bn.forward(&x, 3, 10, true, &mut y);
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|b| y[(b * 2 + ch) * 10..(b * 2 + ch + 1) * 10].to_vec())
                .collect();
            let m = vals.iter().sum::<f64>() / 30.0;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 30.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-3);
        }
        assert!(bn.running_mean[0] != 0.0);
    }
}
