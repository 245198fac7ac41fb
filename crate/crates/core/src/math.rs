//! Small dense linear algebra kernels used by the layer implementations.
//!
//! All loops accumulate in a fixed order, which is what the engine's
//! determinism contract requires. Multiplies and adds are kept as separate
//! operations (no fused multiply-add), so results do not depend on which
//! instruction set the build targets.

/// y[i] += a * x[i]
#[inline]
pub fn axpy(a: f32, x: &[f32], y: &mut [f32]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * *xi;
    }
}

/// Dot product with eight partial accumulators (fixed combination order).
#[inline]
pub fn dot(x: &[f32], y: &[f32]) -> f32 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [0.0f32; 8];
    let chunks = x.len() / 8;
    for i in 0..chunks {
        let xs = &x[i * 8..i * 8 + 8];
        let ys = &y[i * 8..i * 8 + 8];
        for l in 0..8 {
            acc[l] += xs[l] * ys[l];
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 8..x.len() {
        tail += x[i] * y[i];
    }
    let s01 = acc[0] + acc[1];
    let s23 = acc[2] + acc[3];
    let s45 = acc[4] + acc[5];
    let s67 = acc[6] + acc[7];
    ((s01 + s23) + (s45 + s67)) + tail
}

const COL_TILE: usize = 1024;

/// c (m x n) += a (m x k) * b (k x n); all row-major.
pub fn gemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut n0 = 0;
    while n0 < n {
        let nt = core::cmp::min(COL_TILE, n - n0);
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut c[i * n + n0..i * n + n0 + nt];
            for (kk, &aik) in arow.iter().enumerate() {
                let brow = &b[kk * n + n0..kk * n + n0 + nt];
                axpy(aik, brow, crow);
            }
        }
        n0 += nt;
    }
}

/// c (m x n) += a (m x k) * b^T, where b is (n x k) row-major.
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cij) in crow.iter_mut().enumerate() {
            *cij += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// c (ra x cb) += a^T * b, where a is (m x ra) and b is (m x cb) row-major.
pub fn gemm_tn(m: usize, ra: usize, cb: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * ra);
    debug_assert_eq!(b.len(), m * cb);
    debug_assert_eq!(c.len(), ra * cb);
    let mut c0 = 0;
    while c0 < cb {
        let ct = core::cmp::min(COL_TILE, cb - c0);
        for mm in 0..m {
            let arow = &a[mm * ra..(mm + 1) * ra];
            let brow = &b[mm * cb + c0..mm * cb + c0 + ct];
            for (i, &aim) in arow.iter().enumerate() {
                let crow = &mut c[i * cb + c0..i * cb + c0 + ct];
                axpy(aim, brow, crow);
            }
        }
        c0 += ct;
    }
}

/// Lowers one padded convolution window sweep of a single image into a
/// column block of a larger matrix.
///
/// `img` is a (c, h, w) slab. `cols` holds `c*k*k` rows of `row_len`
/// columns, row-major; this call writes the `oh*ow` columns starting at
/// column `col0`. The caller must have zero-filled `cols` beforehand —
/// padding taps are simply left untouched.
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    img: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut [f32],
    row_len: usize,
    col0: usize,
) {
    debug_assert_eq!(img.len(), c * h * w);
    debug_assert_eq!(cols.len(), c * k * k * row_len);
    debug_assert!(col0 + oh * ow <= row_len);
    for ci in 0..c {
        let plane = &img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * row_len + col0;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                    if stride == 1 {
                        // Contiguous run of in-range taps.
                        let ix0 = kx as isize - pad as isize;
                        let lo = (-ix0).max(0) as usize;
                        let hi = core::cmp::min(ow as isize, w as isize - ix0).max(0) as usize;
                        if lo < hi {
                            let s0 = (ix0 + lo as isize) as usize;
                            dst[lo..hi].copy_from_slice(&src[s0..s0 + hi - lo]);
                        }
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds one column block back into a
/// (c, h, w) slab. Reads the `oh*ow` columns starting at `col0`.
#[allow(clippy::too_many_arguments)]
pub fn col2im(
    cols: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    img: &mut [f32],
    row_len: usize,
    col0: usize,
) {
    debug_assert_eq!(img.len(), c * h * w);
    debug_assert_eq!(cols.len(), c * k * k * row_len);
    debug_assert!(col0 + oh * ow <= row_len);
    for ci in 0..c {
        let plane = &mut img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * row_len + col0;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * ow..row + (oy + 1) * ow];
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    if stride == 1 {
                        let ix0 = kx as isize - pad as isize;
                        let lo = (-ix0).max(0) as usize;
                        let hi = core::cmp::min(ow as isize, w as isize - ix0).max(0) as usize;
                        if lo < hi {
                            let d0 = (ix0 + lo as isize) as usize;
                            for (d, s) in dst[d0..d0 + hi - lo].iter_mut().zip(&src[lo..hi]) {
                                *d += *s;
                            }
                        }
                    } else {
                        for (ox, s) in src.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += *s;
                            }
                        }
                    }
                }
            }
        }
    }
}
