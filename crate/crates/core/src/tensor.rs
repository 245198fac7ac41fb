//! Dense NCHW tensor.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::Result;

/// Owned f32 tensor with shape (n, c, h, w), stored row-major NCHW.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor4 {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::Config(alloc::format!(
                "tensor data length {} does not match shape ({n},{c},{h},{w})",
                data.len()
            )));
        }
        Ok(Tensor4 { n, c, h, w, data })
    }

    /// Reinterprets the same buffer under a new shape of equal volume.
    pub fn into_shape(self, n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        Self::from_vec(n, c, h, w, self.data)
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.idx(n, c, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut f32 {
        let i = self.idx(n, c, y, x);
        &mut self.data[i]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Contiguous (h*w) plane for one (n, c).
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let s = (n * self.c + c) * self.h * self.w;
        &self.data[s..s + self.h * self.w]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let s = (n * self.c + c) * self.h * self.w;
        let e = s + self.h * self.w;
        &mut self.data[s..e]
    }

    /// Contiguous (c*h*w) slab for one sample.
    #[inline]
    pub fn sample(&self, n: usize) -> &[f32] {
        let s = n * self.c * self.h * self.w;
        &self.data[s..s + self.c * self.h * self.w]
    }

    #[inline]
    pub fn sample_mut(&mut self, n: usize) -> &mut [f32] {
        let s = n * self.c * self.h * self.w;
        let e = s + self.c * self.h * self.w;
        &mut self.data[s..e]
    }

    /// Elementwise `self += other`; shapes must match.
    pub fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Config(alloc::format!(
                "elementwise add of mismatched shapes {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_nchw_row_major() {
        let mut t = Tensor4::zeros(2, 3, 4, 5);
        *t.at_mut(1, 2, 3, 4) = 7.0;
        assert_eq!(t.as_slice()[119], 7.0);
        assert_eq!(t.at(1, 2, 3, 4), 7.0);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor4::from_vec(1, 1, 2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn planes_are_contiguous_views() {
        let data: Vec<f32> = (0..24).map(|v| v as f32).collect();
        let t = Tensor4::from_vec(2, 3, 2, 2, data).unwrap();
        assert_eq!(t.plane(0, 1), &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(t.sample(1), &(12..24).map(|v| v as f32).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn add_assign_checks_shape() {
        let mut a = Tensor4::zeros(1, 1, 2, 2);
        let b = Tensor4::zeros(1, 1, 2, 3);
        assert!(a.add_assign(&b).is_err());
    }
}
