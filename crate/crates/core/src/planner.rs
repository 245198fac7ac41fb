//! Pruning plan construction: clustering layers by score and the iterative
//! group-wise prune/retrain/accept loop.
//!
//! Layers with similar sensitivity scores share one pruning ratio. Groups
//! are visited from least to most sensitive; within a group the ratio is
//! escalated step by step for as long as each retrained candidate improves
//! on the group's best accuracy, and the first non-improving candidate is
//! discarded (parameters and mask both), after which the loop advances to
//! the next group.

use alloc::vec::Vec;
use alloc::{format, vec};

use crate::data::DatasetSplit;
use crate::error::Error;
use crate::model::Network;
use crate::rng::derive_seed;
use crate::sensitivity::SensitivityReport;
use crate::surgery::{self, PruneMask, SelectionStrategy};
use crate::train::{evaluate, train, TrainConfig};
use crate::Result;

/// Partition of the prunable layers into score-similarity groups, ordered
/// from least to most sensitive.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroupAssignment {
    /// Each inner list holds model layer indices, ascending; outer order is
    /// ascending mean score.
    pub groups: Vec<Vec<usize>>,
    /// Mean score of each group, strictly increasing.
    pub mean_scores: Vec<f64>,
}

impl GroupAssignment {
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() || self.groups.iter().any(|g| g.is_empty()) {
            return Err(Error::InvalidRequest("groups must be non-empty".into()));
        }
        if self.groups.len() != self.mean_scores.len() {
            return Err(Error::InvalidRequest("one mean score per group required".into()));
        }
        let mut seen = Vec::new();
        for g in &self.groups {
            for pair in g.windows(2) {
                if pair[1] <= pair[0] {
                    return Err(Error::InvalidRequest(
                        "layers within a group must be strictly ascending".into(),
                    ));
                }
            }
            for &l in g {
                if seen.contains(&l) {
                    return Err(Error::InvalidRequest(format!(
                        "layer {l} appears in more than one group"
                    )));
                }
                seen.push(l);
            }
        }
        for pair in self.mean_scores.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::InvalidRequest(
                    "group mean scores must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.groups.iter().map(|g| g.len()).sum()
    }
}

/// Clusters `(layer, score)` pairs by sorting scores descending and cutting
/// wherever the gap between neighbours exceeds
/// `threshold_frac · (max − min)`. Groups come back in ascending score
/// order. Identical scores always land in one group.
pub fn group_scores(scores: &[(usize, f64)], threshold_frac: f64) -> Result<GroupAssignment> {
    if !(threshold_frac > 0.0 && threshold_frac < 1.0) {
        return Err(Error::Config(format!(
            "grouping threshold fraction {threshold_frac} is outside (0, 1)"
        )));
    }
    if scores.is_empty() {
        return Err(Error::InvalidRequest("no layers to group".into()));
    }
    for &(_, s) in scores {
        if !s.is_finite() {
            return Err(Error::InvalidRequest("scores must be finite".into()));
        }
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let max = sorted.first().unwrap().1;
    let min = sorted.last().unwrap().1;
    let threshold = threshold_frac * (max - min);

    let mut descending: Vec<Vec<(usize, f64)>> = vec![vec![sorted[0]]];
    for pair in sorted.windows(2) {
        let gap = pair[0].1 - pair[1].1;
        if max > min && gap > threshold {
            descending.push(Vec::new());
        }
        descending.last_mut().unwrap().push(pair[1]);
    }

    let mut groups = Vec::with_capacity(descending.len());
    let mut mean_scores = Vec::with_capacity(descending.len());
    for cluster in descending.into_iter().rev() {
        let mean = cluster.iter().map(|&(_, s)| s).sum::<f64>() / cluster.len() as f64;
        let mut layers: Vec<usize> = cluster.into_iter().map(|(l, _)| l).collect();
        layers.sort_unstable();
        groups.push(layers);
        mean_scores.push(mean);
    }
    Ok(GroupAssignment { groups, mean_scores })
}

/// Groups the layers of a sensitivity report by their aggregated scores.
pub fn group_layers(report: &SensitivityReport, threshold_frac: f64) -> Result<GroupAssignment> {
    let scores: Vec<(usize, f64)> =
        report.layers.iter().map(|l| (l.layer, l.score)).collect();
    group_scores(&scores, threshold_frac)
}

/// How filters are picked during the final pruning stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SelectionKind {
    Random,
    L1Norm,
    L2Norm,
}

impl SelectionKind {
    fn strategy(self, seed: u64) -> SelectionStrategy {
        match self {
            SelectionKind::Random => SelectionStrategy::Random { seed },
            SelectionKind::L1Norm => SelectionStrategy::L1Norm,
            SelectionKind::L2Norm => SelectionStrategy::L2Norm,
        }
    }
}

/// Settings for the iterative pruning loop.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct PruneConfig {
    /// First cumulative ratio attempted for every group.
    pub initial_ratio: f64,
    /// Ratio increase after each accepted attempt.
    pub ratio_step: f64,
    /// Stop once this fraction of all prunable filters is removed.
    pub target_overall: f64,
    pub selection: SelectionKind,
    /// Retraining epochs per attempt, all gradients free.
    pub retrain_epochs: usize,
    pub retrain_lr: f32,
    pub batch_size: usize,
    pub momentum: f32,
}

impl PruneConfig {
    pub fn new(target_overall: f64, retrain_epochs: usize, retrain_lr: f32) -> Self {
        PruneConfig {
            initial_ratio: 0.10,
            ratio_step: 0.05,
            target_overall,
            selection: SelectionKind::L1Norm,
            retrain_epochs,
            retrain_lr,
            batch_size: 64,
            momentum: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_ratio > 0.0 && self.initial_ratio < 1.0) {
            return Err(Error::Config(format!(
                "initial ratio {} is outside (0, 1)",
                self.initial_ratio
            )));
        }
        if !(self.ratio_step > 0.0 && self.ratio_step < 1.0) {
            return Err(Error::Config(format!(
                "ratio step {} is outside (0, 1)",
                self.ratio_step
            )));
        }
        if !(0.0..=1.0).contains(&self.target_overall) {
            return Err(Error::Config(format!(
                "overall target {} is outside [0, 1]",
                self.target_overall
            )));
        }
        if self.retrain_epochs == 0 {
            return Err(Error::Config("retraining needs at least one epoch".into()));
        }
        self.train_config(0).validate()
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.retrain_epochs,
            batch_size: self.batch_size,
            schedule: vec![(0, self.retrain_lr)],
            momentum: self.momentum,
            shuffle: true,
            seed,
        }
    }
}

/// What happened to one prune/retrain attempt.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Decision {
    /// The candidate beat the group's best accuracy and became current.
    Accepted,
    /// The candidate did not improve; it was discarded and the loop moved
    /// to the next group.
    Rejected,
    /// The group's layers were already cut as deep as the one-survivor rule
    /// allows, so no attempt was made and the loop moved on.
    Saturated,
}

/// One row of the iterative-pruning audit trail.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationEntry {
    pub group: usize,
    /// Cumulative ratio this attempt extended the group to.
    pub ratio: f64,
    /// Filters removed by this attempt across the group's layers.
    pub removed_this_step: usize,
    /// Fraction of all prunable filters removed after this attempt.
    pub overall: f64,
    /// Retrained accuracy of the candidate (equals `best_before` for a
    /// saturated entry, where nothing was retrained).
    pub accuracy: f64,
    /// Group-best accuracy before the decision.
    pub best_before: f64,
    pub decision: Decision,
}

/// Audit trail of a full iterative-pruning run.
#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationLog {
    /// Test accuracy of the model the loop started from.
    pub baseline: f64,
    pub entries: Vec<IterationEntry>,
}

/// Result of the iterative pruning loop.
#[derive(Clone, Debug)]
pub struct PruneOutcome {
    pub net: Network,
    pub mask: PruneMask,
    pub log: IterationLog,
    /// Final accepted cumulative ratio per group (0 when a group never had
    /// an accepted attempt).
    pub final_ratios: Vec<f64>,
    /// Fraction of prunable filters removed in the returned network.
    pub overall: f64,
    /// Test accuracy of the returned network.
    pub accuracy: f64,
    /// Whether `target_overall` was reached before the groups ran out.
    pub target_reached: bool,
}

/// Fraction of the prunable filters that `mask` removes from the network's
/// original architecture.
pub fn overall_ratio(mask: &PruneMask, net: &Network) -> Result<f64> {
    let prunable = surgery::prunable_layers(net);
    let total: u64 = prunable
        .iter()
        .map(|&l| net.original_width(l).unwrap_or(0) as u64)
        .sum();
    if total == 0 {
        return Err(Error::Constraint("network has no prunable filters".into()));
    }
    let mut removed = 0u64;
    for (&layer, ids) in &mask.0 {
        if !prunable.contains(&layer) {
            return Err(Error::InvalidRequest(format!(
                "mask names layer {layer}, which is not prunable in this network"
            )));
        }
        let width = net.original_width(layer).unwrap() as u64;
        if ids.len() as u64 >= width {
            return Err(Error::InvalidRequest(format!(
                "mask removes all filters of layer {layer}"
            )));
        }
        removed += ids.len() as u64;
    }
    Ok(removed as f64 / total as f64)
}

/// Extends every layer of one group to the cumulative ratio, removing the
/// incremental filters from a clone. Returns the candidate and how many
/// filters the step removed.
fn extend_group(
    net: &Network,
    layers: &[usize],
    ratio: f64,
    selection: SelectionKind,
    step_seed: u64,
) -> Result<(Network, usize)> {
    let mut cand = net.clone();
    let mut removed = 0usize;
    for &layer in layers {
        let width = cand
            .original_width(layer)
            .ok_or_else(|| Error::InvalidRequest(format!("layer {layer} is not a conv layer")))?
            as usize;
        let survivors = cand.survivors(layer).unwrap().len();
        let target = surgery::removal_target(ratio, width);
        let current = width - survivors;
        if target > current {
            let delta = target - current;
            let strategy = selection.strategy(derive_seed(step_seed, &[layer as u64]));
            let ids = surgery::select_filters(&cand, layer, delta, strategy)?;
            cand = surgery::remove_filters(&cand, layer, &ids)?;
            removed += delta;
        }
    }
    Ok((cand, removed))
}

/// Iteratively prunes group by group, least sensitive first.
///
/// Every attempt extends the current group's mask to its next cumulative
/// ratio on a candidate clone, retrains it with all gradients free, and
/// keeps it only if it strictly beats the group's best accuracy so far
/// (which starts at zero, so a first attempt with any nonzero accuracy is
/// kept). A rejected candidate is dropped wholesale — parameters and mask
/// revert to the last accepted state — and the loop advances to the next
/// group. The loop stops early once the overall removed fraction reaches
/// the configured target.
pub fn iterative_prune(
    net: &Network,
    groups: &GroupAssignment,
    train_split: &DatasetSplit,
    test_split: &DatasetSplit,
    cfg: &PruneConfig,
    master_seed: u64,
) -> Result<PruneOutcome> {
    cfg.validate()?;
    groups.validate()?;
    let prunable = surgery::prunable_layers(net);
    for g in &groups.groups {
        for l in g {
            if !prunable.contains(l) {
                return Err(Error::Constraint(format!(
                    "group layer {l} is not prunable in this network"
                )));
            }
        }
    }

    let baseline = evaluate(net, test_split)?.0;
    let mut log = IterationLog { baseline, entries: Vec::new() };
    let mut final_ratios = vec![0.0; groups.groups.len()];
    let mut current = net.clone();
    current.unfreeze_all();
    let mut overall = 0.0;
    let mut target_reached = cfg.target_overall <= 0.0;

    if !target_reached {
        'groups: for (k, layers) in groups.groups.iter().enumerate() {
            let mut ratio = cfg.initial_ratio;
            let mut best = 0.0f64;
            loop {
                let step_seed =
                    derive_seed(master_seed, &[k as u64, log.entries.len() as u64]);
                let (mut cand, removed) =
                    extend_group(&current, layers, ratio, cfg.selection, step_seed)?;
                if removed == 0 {
                    log.entries.push(IterationEntry {
                        group: k,
                        ratio,
                        removed_this_step: 0,
                        overall,
                        accuracy: best,
                        best_before: best,
                        decision: Decision::Saturated,
                    });
                    continue 'groups;
                }
                let tc = cfg.train_config(derive_seed(step_seed, &[u64::MAX]));
                train(&mut cand, train_split, &tc)?;
                let acc = evaluate(&cand, test_split)?.0;
                let cand_overall = overall_ratio(&surgery::mask_of(&cand), net)?;
                let accepted = acc > best;
                log.entries.push(IterationEntry {
                    group: k,
                    ratio,
                    removed_this_step: removed,
                    overall: cand_overall,
                    accuracy: acc,
                    best_before: best,
                    decision: if accepted { Decision::Accepted } else { Decision::Rejected },
                });
                if accepted {
                    best = acc;
                    final_ratios[k] = ratio;
                    current = cand;
                    overall = cand_overall;
                    ratio += cfg.ratio_step;
                    if overall >= cfg.target_overall {
                        target_reached = true;
                        break 'groups;
                    }
                } else {
                    continue 'groups;
                }
            }
        }
    }

    let accuracy = evaluate(&current, test_split)?.0;
    let mask = surgery::mask_of(&current);
    Ok(PruneOutcome {
        net: current,
        mask,
        log,
        final_ratios,
        overall,
        accuracy,
        target_reached,
    })
}
