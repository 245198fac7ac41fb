//! Neural layer primitives: convolution, batch normalization, ReLU,
//! max-pooling, and fully-connected layers.
//!
//! Forward passes in training mode return the cache their backward pass
//! needs. Backward passes overwrite the layer's gradient buffers and return
//! the gradient with respect to the layer input. All math runs serially in a
//! fixed order so results are reproducible bit-for-bit for a given build.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{col2im, gemm, gemm_nt, gemm_tn, im2col};
use crate::tensor::Tensor4;

/// 2-D convolution with square kernels and zero padding.
#[derive(Clone, Debug)]
pub struct Conv {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// Weights, (out_ch, in_ch, k, k) row-major.
    pub w: Vec<f32>,
    pub b: Vec<f32>,
    pub dw: Vec<f32>,
    pub db: Vec<f32>,
}

impl Conv {
    pub fn new(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize) -> Self {
        Conv {
            in_ch,
            out_ch,
            k,
            stride,
            pad,
            w: vec![0.0; out_ch * in_ch * k * k],
            b: vec![0.0; out_ch],
            dw: vec![0.0; out_ch * in_ch * k * k],
            db: vec![0.0; out_ch],
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn lower(&self, x: &Tensor4, oh: usize, ow: usize) -> Vec<f32> {
        let (n, c, h, w) = x.shape();
        let p = oh * ow;
        let np = n * p;
        let kk = c * self.k * self.k;
        let mut cols = vec![0.0; kk * np];
        for i in 0..n {
            im2col(
                x.sample(i),
                c,
                h,
                w,
                self.k,
                self.stride,
                self.pad,
                oh,
                ow,
                &mut cols,
                np,
                i * p,
            );
        }
        cols
    }

    pub fn forward(&self, x: &Tensor4) -> Tensor4 {
        let (n, c, h, w) = x.shape();
        debug_assert_eq!(c, self.in_ch);
        let (oh, ow) = self.out_hw(h, w);
        let p = oh * ow;
        let np = n * p;
        let kk = c * self.k * self.k;
        let cols = self.lower(x, oh, ow);
        let mut out_mat = vec![0.0; self.out_ch * np];
        for (f, row) in out_mat.chunks_exact_mut(np).enumerate() {
            row.fill(self.b[f]);
        }
        gemm(self.out_ch, kk, np, &self.w, &cols, &mut out_mat);
        let mut y = Tensor4::zeros(n, self.out_ch, oh, ow);
        for i in 0..n {
            for f in 0..self.out_ch {
                y.plane_mut(i, f)
                    .copy_from_slice(&out_mat[f * np + i * p..f * np + (i + 1) * p]);
            }
        }
        y
    }

    /// `x` is the input that produced `dy` in the forward pass.
    pub fn backward(&mut self, x: &Tensor4, dy: &Tensor4) -> Tensor4 {
        let (n, c, h, w) = x.shape();
        let (_, oc, oh, ow) = dy.shape();
        debug_assert_eq!(oc, self.out_ch);
        let p = oh * ow;
        let np = n * p;
        let kk = c * self.k * self.k;

        let mut dy_mat = vec![0.0; self.out_ch * np];
        for i in 0..n {
            for f in 0..self.out_ch {
                dy_mat[f * np + i * p..f * np + (i + 1) * p].copy_from_slice(dy.plane(i, f));
            }
        }
        for (f, row) in dy_mat.chunks_exact(np).enumerate() {
            self.db[f] = row.iter().sum();
        }

        let cols = self.lower(x, oh, ow);
        self.dw.fill(0.0);
        gemm_nt(self.out_ch, np, kk, &dy_mat, &cols, &mut self.dw);

        let mut dcols = vec![0.0; kk * np];
        gemm_tn(self.out_ch, kk, np, &self.w, &dy_mat, &mut dcols);
        let mut dx = Tensor4::zeros(n, c, h, w);
        for i in 0..n {
            col2im(
                &dcols,
                c,
                h,
                w,
                self.k,
                self.stride,
                self.pad,
                oh,
                ow,
                dx.sample_mut(i),
                np,
                i * p,
            );
        }
        dx
    }
}

/// Per-channel batch normalization over (n, h, w).
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub ch: usize,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub dgamma: Vec<f32>,
    pub dbeta: Vec<f32>,
    pub momentum: f64,
    pub eps: f64,
}

pub struct BnCache {
    pub xhat: Vec<f32>,
    pub inv_std: Vec<f32>,
}

impl BatchNorm {
    pub fn new(ch: usize) -> Self {
        BatchNorm {
            ch,
            gamma: vec![1.0; ch],
            beta: vec![0.0; ch],
            running_mean: vec![0.0; ch],
            running_var: vec![1.0; ch],
            dgamma: vec![0.0; ch],
            dbeta: vec![0.0; ch],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Normalizes with the current batch statistics. Running statistics are
    /// refreshed only when `update_stats` is set (the variance estimate fed
    /// into them is the unbiased one).
    pub fn forward_train(&mut self, x: &Tensor4, update_stats: bool) -> (Tensor4, BnCache) {
        let (n, c, h, w) = x.shape();
        debug_assert_eq!(c, self.ch);
        let cnt = (n * h * w) as f64;
        let mut y = Tensor4::zeros(n, c, h, w);
        let mut xhat = vec![0.0f32; x.len()];
        let mut inv_std = vec![0.0f32; c];
        for ch in 0..c {
            let mut s = 0.0f64;
            for i in 0..n {
                for &v in x.plane(i, ch) {
                    s += v as f64;
                }
            }
            let mean = s / cnt;
            let mut s2 = 0.0f64;
            for i in 0..n {
                for &v in x.plane(i, ch) {
                    let d = v as f64 - mean;
                    s2 += d * d;
                }
            }
            let var = s2 / cnt;
            let istd = 1.0 / libm::sqrt(var + self.eps);
            inv_std[ch] = istd as f32;
            let (g, bt) = (self.gamma[ch] as f64, self.beta[ch] as f64);
            for i in 0..n {
                let base = x.idx(i, ch, 0, 0);
                let src = x.plane(i, ch);
                let dst = y.sample_mut(i);
                for (j, &v) in src.iter().enumerate() {
                    let xh = (v as f64 - mean) * istd;
                    xhat[base + j] = xh as f32;
                    dst[ch * h * w + j] = (g * xh + bt) as f32;
                }
            }
            if update_stats {
                let unbiased = if cnt > 1.0 { var * cnt / (cnt - 1.0) } else { var };
                self.running_mean[ch] = ((1.0 - self.momentum) * self.running_mean[ch] as f64
                    + self.momentum * mean) as f32;
                self.running_var[ch] = ((1.0 - self.momentum) * self.running_var[ch] as f64
                    + self.momentum * unbiased) as f32;
            }
        }
        (y, BnCache { xhat, inv_std })
    }

    /// Normalizes with the running statistics.
    pub fn forward_eval(&self, x: &Tensor4) -> Tensor4 {
        let (n, c, h, w) = x.shape();
        debug_assert_eq!(c, self.ch);
        let mut y = Tensor4::zeros(n, c, h, w);
        for ch in 0..c {
            let istd = 1.0 / libm::sqrt(self.running_var[ch] as f64 + self.eps);
            let mean = self.running_mean[ch] as f64;
            let (g, bt) = (self.gamma[ch] as f64, self.beta[ch] as f64);
            for i in 0..n {
                let src = x.plane(i, ch);
                let dst = y.sample_mut(i);
                for (j, &v) in src.iter().enumerate() {
                    dst[ch * h * w + j] = (g * (v as f64 - mean) * istd + bt) as f32;
                }
            }
        }
        y
    }

    pub fn backward(&mut self, cache: &BnCache, dy: &Tensor4) -> Tensor4 {
        let (n, c, h, w) = dy.shape();
        let cnt = (n * h * w) as f64;
        let mut dx = Tensor4::zeros(n, c, h, w);
        for ch in 0..c {
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for i in 0..n {
                let base = dy.idx(i, ch, 0, 0);
                for (j, &g) in dy.plane(i, ch).iter().enumerate() {
                    sum_dy += g as f64;
                    sum_dy_xhat += g as f64 * cache.xhat[base + j] as f64;
                }
            }
            self.dgamma[ch] = sum_dy_xhat as f32;
            self.dbeta[ch] = sum_dy as f32;
            let a = self.gamma[ch] as f64 * cache.inv_std[ch] as f64 / cnt;
            for i in 0..n {
                let base = dy.idx(i, ch, 0, 0);
                let src = dy.plane(i, ch);
                let dst = dx.sample_mut(i);
                for (j, &g) in src.iter().enumerate() {
                    let xh = cache.xhat[base + j] as f64;
                    dst[ch * h * w + j] = (a * (cnt * g as f64 - sum_dy - xh * sum_dy_xhat)) as f32;
                }
            }
        }
        dx
    }
}

/// Applies max(0, x) elementwise, consuming the input.
pub fn relu_forward(mut x: Tensor4) -> Tensor4 {
    for v in x.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    x
}

/// ReLU gradient recovered from the forward *output*: positions where the
/// output is positive pass the gradient through.
pub fn relu_backward(y: &Tensor4, dy: &Tensor4) -> Tensor4 {
    debug_assert_eq!(y.shape(), dy.shape());
    let mut dx = dy.clone();
    for (d, &o) in dx.as_mut_slice().iter_mut().zip(y.as_slice()) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// Non-overlapping-capable max pooling (no padding).
#[derive(Clone, Copy, Debug)]
pub struct MaxPool {
    pub k: usize,
    pub stride: usize,
}

pub struct PoolCache {
    /// Flat index of the selected input element within its (h, w) plane,
    /// one entry per output element in NCHW order.
    pub arg: Vec<u32>,
    pub in_h: usize,
    pub in_w: usize,
}

impl MaxPool {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - self.k) / self.stride + 1, (w - self.k) / self.stride + 1)
    }

    pub fn forward(&self, x: &Tensor4) -> (Tensor4, PoolCache) {
        let (n, c, h, w) = x.shape();
        let (oh, ow) = self.out_hw(h, w);
        let mut y = Tensor4::zeros(n, c, oh, ow);
        let mut arg = Vec::with_capacity(n * c * oh * ow);
        for i in 0..n {
            for ch in 0..c {
                let plane = x.plane(i, ch);
                let out = y.plane_mut(i, ch);
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_at = 0u32;
                        for ky in 0..self.k {
                            let iy = oy * self.stride + ky;
                            for kx in 0..self.k {
                                let ix = ox * self.stride + kx;
                                let v = plane[iy * w + ix];
                                // Strict comparison keeps the first (lowest
                                // flat index) element on ties.
                                if v > best {
                                    best = v;
                                    best_at = (iy * w + ix) as u32;
                                }
                            }
                        }
                        out[oy * ow + ox] = best;
                        arg.push(best_at);
                    }
                }
            }
        }
        (y, PoolCache { arg, in_h: h, in_w: w })
    }

    pub fn backward(&self, cache: &PoolCache, dy: &Tensor4) -> Tensor4 {
        let (n, c, _, _) = dy.shape();
        let mut dx = Tensor4::zeros(n, c, cache.in_h, cache.in_w);
        let mut pos = 0;
        for i in 0..n {
            for ch in 0..c {
                let plane = dx.plane_mut(i, ch);
                for &g in dy.plane(i, ch) {
                    plane[cache.arg[pos] as usize] += g;
                    pos += 1;
                }
            }
        }
        dx
    }
}

/// Fully-connected layer; expects input of shape (n, in_f, 1, 1).
#[derive(Clone, Debug)]
pub struct Dense {
    pub in_f: usize,
    pub out_f: usize,
    /// Weights, (out_f, in_f) row-major.
    pub w: Vec<f32>,
    pub b: Vec<f32>,
    pub dw: Vec<f32>,
    pub db: Vec<f32>,
}

impl Dense {
    pub fn new(in_f: usize, out_f: usize) -> Self {
        Dense {
            in_f,
            out_f,
            w: vec![0.0; out_f * in_f],
            b: vec![0.0; out_f],
            dw: vec![0.0; out_f * in_f],
            db: vec![0.0; out_f],
        }
    }

    pub fn forward(&self, x: &Tensor4) -> Tensor4 {
        let n = x.n();
        debug_assert_eq!(x.len(), n * self.in_f);
        let mut out = vec![0.0; n * self.out_f];
        for row in out.chunks_exact_mut(self.out_f) {
            row.copy_from_slice(&self.b);
        }
        gemm_nt(n, self.in_f, self.out_f, x.as_slice(), &self.w, &mut out);
        Tensor4::from_vec(n, self.out_f, 1, 1, out).expect("shape consistent")
    }

    pub fn backward(&mut self, x: &Tensor4, dy: &Tensor4) -> Tensor4 {
        let n = x.n();
        self.dw.fill(0.0);
        gemm_tn(n, self.out_f, self.in_f, dy.as_slice(), x.as_slice(), &mut self.dw);
        self.db.fill(0.0);
        for row in dy.as_slice().chunks_exact(self.out_f) {
            for (d, &g) in self.db.iter_mut().zip(row) {
                *d += g;
            }
        }
        let mut dx = vec![0.0; n * self.in_f];
        gemm(n, self.out_f, self.in_f, dy.as_slice(), &self.w, &mut dx);
        Tensor4::from_vec(n, self.in_f, 1, 1, dx).expect("shape consistent")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand_tensor(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor4 {
        let mut r = Rng::new(seed);
        let data = (0..n * c * h * w).map(|_| r.uniform(-1.0, 1.0)).collect();
        Tensor4::from_vec(n, c, h, w, data).unwrap()
    }

    /// Direct six-loop convolution, the shape the GEMM path must reproduce.
    fn conv_naive(conv: &Conv, x: &Tensor4) -> Tensor4 {
        let (n, c, h, w) = x.shape();
        let (oh, ow) = conv.out_hw(h, w);
        let mut y = Tensor4::zeros(n, conv.out_ch, oh, ow);
        for i in 0..n {
            for f in 0..conv.out_ch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = conv.b[f] as f64;
                        for ci in 0..c {
                            for ky in 0..conv.k {
                                for kx in 0..conv.k {
                                    let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let wv = conv.w
                                        [((f * c + ci) * conv.k + ky) * conv.k + kx];
                                    acc += wv as f64
                                        * x.at(i, ci, iy as usize, ix as usize) as f64;
                                }
                            }
                        }
                        *y.at_mut(i, f, oy, ox) = acc as f32;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_forward_matches_direct_convolution() {
        let mut conv = Conv::new(3, 4, 3, 1, 1);
        let mut r = Rng::new(11);
        for v in conv.w.iter_mut().chain(conv.b.iter_mut()) {
            *v = r.uniform(-0.5, 0.5);
        }
        let x = rand_tensor(2, 3, 5, 6, 12);
        let got = conv.forward(&x);
        let want = conv_naive(&conv, &x);
        assert_eq!(got.shape(), want.shape());
        for (a, b) in got.as_slice().iter().zip(want.as_slice()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn strided_conv_shrinks_maps() {
        let conv = Conv::new(2, 2, 3, 2, 1);
        assert_eq!(conv.out_hw(32, 32), (16, 16));
        let x = rand_tensor(1, 2, 8, 8, 3);
        let got = conv.forward(&x);
        let want = conv_naive(&conv, &x);
        for (a, b) in got.as_slice().iter().zip(want.as_slice()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn batchnorm_train_normalizes_batch() {
        let mut bn = BatchNorm::new(3);
        let x = rand_tensor(4, 3, 5, 5, 7);
        let (y, _) = bn.forward_train(&x, true);
        for ch in 0..3 {
            let mut s = 0.0f64;
            let mut s2 = 0.0f64;
            for i in 0..4 {
                for &v in y.plane(i, ch) {
                    s += v as f64;
                    s2 += (v as f64) * (v as f64);
                }
            }
            let cnt = (4 * 5 * 5) as f64;
            let mean = s / cnt;
            let var = s2 / cnt - mean * mean;
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn batchnorm_running_stats_follow_momentum() {
        let mut bn = BatchNorm::new(1);
        let x = Tensor4::from_vec(1, 1, 1, 4, alloc::vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        bn.forward_train(&x, true);
        // mean 2.5, biased var 1.25, unbiased 5/3.
        assert!((bn.running_mean[0] - 0.25).abs() < 1e-6);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-6);
        let frozen = bn.running_mean[0];
        bn.forward_train(&x, false);
        assert_eq!(bn.running_mean[0], frozen);
    }

    #[test]
    fn maxpool_ties_keep_first_element() {
        let x = Tensor4::from_vec(1, 1, 2, 2, alloc::vec![7.0, 7.0, 7.0, 7.0]).unwrap();
        let pool = MaxPool { k: 2, stride: 2 };
        let (y, cache) = pool.forward(&x);
        assert_eq!(y.as_slice(), &[7.0]);
        assert_eq!(cache.arg, alloc::vec![0]);
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let x = Tensor4::from_vec(1, 1, 2, 4, alloc::vec![1.0, 5.0, 2.0, 0.5, 3.0, 4.0, 2.5, 6.0])
            .unwrap();
        let pool = MaxPool { k: 2, stride: 2 };
        let (y, cache) = pool.forward(&x);
        assert_eq!(y.as_slice(), &[5.0, 6.0]);
        let dy = Tensor4::from_vec(1, 1, 1, 2, alloc::vec![0.5, 0.25]).unwrap();
        let dx = pool.backward(&cache, &dy);
        assert_eq!(dx.as_slice(), &[0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.25]);
    }

    #[test]
    fn dense_forward_matches_manual_product() {
        let mut d = Dense::new(3, 2);
        d.w = alloc::vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5];
        d.b = alloc::vec![0.1, -0.1];
        let x = Tensor4::from_vec(1, 3, 1, 1, alloc::vec![2.0, 3.0, 4.0]).unwrap();
        let y = d.forward(&x);
        assert!((y.as_slice()[0] - (2.0 - 4.0 + 0.1)).abs() < 1e-6);
        assert!((y.as_slice()[1] - (4.5 - 0.1)).abs() < 1e-6);
    }

    #[test]
    fn relu_gradient_masks_on_output() {
        let x = Tensor4::from_vec(1, 1, 1, 4, alloc::vec![-1.0, 0.0, 2.0, -0.5]).unwrap();
        let y = relu_forward(x);
        assert_eq!(y.as_slice(), &[0.0, 0.0, 2.0, 0.0]);
        let dy = Tensor4::from_vec(1, 1, 1, 4, alloc::vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let dx = relu_backward(&y, &dy);
        assert_eq!(dx.as_slice(), &[0.0, 0.0, 1.0, 0.0]);
    }
}
