//! Minibatch SGD training and evaluation.

use alloc::format;
use alloc::vec::Vec;

use crate::data::DatasetSplit;
use crate::error::Error;
use crate::model::Network;
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor4;
use crate::Result;

/// Training hyperparameters. The learning-rate schedule is a list of
/// `(from_epoch, lr)` breakpoints: the first entry must start at epoch 0 and
/// epochs must strictly increase; each rate applies until the next breakpoint.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Vec<(usize, f32)>,
    pub momentum: f32,
    pub shuffle: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.schedule.is_empty() {
            return Err(Error::Config("learning-rate schedule is empty".into()));
        }
        if self.schedule[0].0 != 0 {
            return Err(Error::Config("schedule must start at epoch 0".into()));
        }
        for pair in self.schedule.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::Config("schedule epochs must strictly increase".into()));
            }
        }
        for &(e, lr) in &self.schedule {
            if !lr.is_finite() || lr <= 0.0 {
                return Err(Error::Config(format!("schedule rate {lr} at epoch {e} is invalid")));
            }
        }
        if !self.momentum.is_finite() || self.momentum < 0.0 || self.momentum >= 1.0 {
            return Err(Error::Config(format!("momentum {} is outside [0, 1)", self.momentum)));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f32 {
        let mut lr = self.schedule[0].1;
        for &(from, rate) in &self.schedule {
            if epoch >= from {
                lr = rate;
            }
        }
        lr
    }

    /// The rate in force during the last scheduled epoch; short fine-tuning
    /// phases reuse it.
    pub fn final_lr(&self) -> f32 {
        self.schedule.last().map(|&(_, lr)| lr).unwrap_or(0.0)
    }

    /// Same hyperparameters, but `epochs` epochs at the flat final rate.
    pub fn fine_tune(&self, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            schedule: alloc::vec![(0, self.final_lr())],
            ..self.clone()
        }
    }
}

/// Mean training loss per epoch.
#[derive(Clone, Debug, Default)]
pub struct TrainStats {
    pub epoch_losses: Vec<f64>,
}

/// Softmax cross-entropy over a (n, k, 1, 1) score tensor. Returns the mean
/// loss and the gradient with respect to the scores.
pub fn softmax_xent(logits: &Tensor4, labels: &[u32]) -> (f64, Tensor4) {
    let (n, k, _, _) = logits.shape();
    debug_assert_eq!(n, labels.len());
    let mut dlogits = Tensor4::zeros(n, k, 1, 1);
    let mut total = 0.0f64;
    for i in 0..n {
        let row = logits.sample(i);
        let mut m = f64::NEG_INFINITY;
        for &v in row {
            if (v as f64) > m {
                m = v as f64;
            }
        }
        let mut z = 0.0f64;
        for &v in row {
            z += libm::exp(v as f64 - m);
        }
        let lse = m + libm::log(z);
        total += lse - row[labels[i] as usize] as f64;
        let drow = dlogits.sample_mut(i);
        for (j, &v) in row.iter().enumerate() {
            let p = libm::exp(v as f64 - lse);
            let t = if j == labels[i] as usize { 1.0 } else { 0.0 };
            drow[j] = ((p - t) / n as f64) as f32;
        }
    }
    (total / n as f64, dlogits)
}

/// Trains in place. Batch order is derived from `cfg.seed` and the epoch
/// index, so runs are reproducible. Momentum state lives only for this call.
pub fn train(net: &mut Network, split: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainStats> {
    cfg.validate()?;
    if split.is_empty() {
        return Err(Error::InvalidRequest("cannot train on an empty split".into()));
    }
    let mut vel = net.velocities();
    let mut stats = TrainStats::default();
    let mut order: Vec<usize> = (0..split.len()).collect();
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            let mut rng = Rng::new(derive_seed(cfg.seed, &[0x6570, epoch as u64]));
            rng.shuffle(&mut order);
        }
        let lr = cfg.lr_at(epoch);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (batch, labels) = split.gather(chunk);
            let (logits, tape) = net.forward_train(&batch)?;
            let (loss, dlogits) = softmax_xent(&logits, &labels);
            net.backward(&tape, &dlogits)?;
            net.sgd_step(lr, cfg.momentum, &mut vel);
            loss_sum += loss;
            batches += 1;
        }
        let mean = loss_sum / batches as f64;
        if !mean.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("loss became {mean}"),
            });
        }
        stats.epoch_losses.push(mean);
    }
    Ok(stats)
}

/// Classification accuracy and mean loss on a split, evaluated in fixed
/// batches so the result does not depend on batching.
pub fn evaluate(net: &Network, split: &DatasetSplit) -> Result<(f64, f64)> {
    if split.is_empty() {
        return Err(Error::InvalidRequest("cannot evaluate an empty split".into()));
    }
    let mut correct = 0usize;
    let mut loss_sum = 0.0f64;
    let indices: Vec<usize> = (0..split.len()).collect();
    for chunk in indices.chunks(256) {
        let (batch, labels) = split.gather(chunk);
        let logits = net.forward_eval(&batch)?;
        for (i, &label) in labels.iter().enumerate() {
            let row = logits.sample(i);
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if best == label as usize {
                correct += 1;
            }
            // Per-sample loss, batch-size independent.
            let mut m = f64::NEG_INFINITY;
            for &v in row {
                if (v as f64) > m {
                    m = v as f64;
                }
            }
            let mut z = 0.0f64;
            for &v in row {
                z += libm::exp(v as f64 - m);
            }
            loss_sum += m + libm::log(z) - row[label as usize] as f64;
        }
    }
    Ok((correct as f64 / split.len() as f64, loss_sum / split.len() as f64))
}
