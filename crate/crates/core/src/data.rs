//! In-memory labeled image datasets.

use alloc::format;
use alloc::vec::Vec;

use crate::error::Error;
use crate::tensor::Tensor4;
use crate::Result;

/// A labeled split: one image per tensor sample, one label per image.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    images: Tensor4,
    labels: Vec<u32>,
    num_classes: usize,
}

impl DatasetSplit {
    pub fn new(images: Tensor4, labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        if images.n() != labels.len() {
            return Err(Error::Config(format!(
                "{} images but {} labels",
                images.n(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::Config("dataset needs at least one class".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::Config(format!(
                "label {bad} is out of range for {num_classes} classes"
            )));
        }
        Ok(DatasetSplit { images, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn images(&self) -> &Tensor4 {
        &self.images
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Image shape as (c, h, w).
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let (_, c, h, w) = self.images.shape();
        (c, h, w)
    }

    /// Copies the given samples into a fresh batch.
    pub fn gather(&self, indices: &[usize]) -> (Tensor4, Vec<u32>) {
        let (_, c, h, w) = self.images.shape();
        let mut batch = Tensor4::zeros(indices.len(), c, h, w);
        let mut labels = Vec::with_capacity(indices.len());
        for (slot, &i) in indices.iter().enumerate() {
            batch.sample_mut(slot).copy_from_slice(self.images.sample(i));
            labels.push(self.labels[i]);
        }
        (batch, labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_label_count_mismatch() {
        let imgs = Tensor4::zeros(3, 1, 2, 2);
        assert!(DatasetSplit::new(imgs, vec![0, 1], 2).is_err());
    }

    #[test]
    fn rejects_out_of_range_label() {
        let imgs = Tensor4::zeros(2, 1, 2, 2);
        assert!(DatasetSplit::new(imgs, vec![0, 5], 2).is_err());
    }

    #[test]
    fn gather_copies_selected_samples() {
        let mut imgs = Tensor4::zeros(3, 1, 1, 2);
        for i in 0..3 {
            imgs.sample_mut(i).fill(i as f32);
        }
        let split = DatasetSplit::new(imgs, vec![0, 1, 2], 3).unwrap();
        let (batch, labels) = split.gather(&[2, 0]);
        assert_eq!(batch.sample(0), &[2.0, 2.0]);
        assert_eq!(batch.sample(1), &[0.0, 0.0]);
        assert_eq!(labels, vec![2, 0]);
    }
}
