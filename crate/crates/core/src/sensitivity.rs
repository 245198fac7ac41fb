//! Per-layer sensitiveness measurement.
//!
//! A layer's importance is probed two ways. *Reliability* freezes the
//! layer's parameters, retrains everything else briefly, and records how the
//! accuracy moves against the untouched baseline. *Stability* removes the
//! layer's filters progressively at an ascending ratio schedule — each step
//! pruning the survivor of the previous one — retraining and evaluating at
//! every step, and compares the accuracy at the deepest cut against the
//! frozen-retrain figure. The two are blended into one score by a convex
//! control factor.
//!
//! Because filter removal is random, the whole probe is repeated for several
//! rounds. Rounds whose accuracy curves fluctuate are filtered out: the round
//! with the lowest curve variance anchors a Pearson-correlation screen, and
//! only rounds sufficiently correlated with that anchor contribute to the
//! final per-layer score.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::DatasetSplit;
use crate::error::Error;
use crate::model::Network;
use crate::rng::derive_seed;
use crate::surgery::{self, SelectionStrategy};
use crate::train::{evaluate, train, TrainConfig};
use crate::Result;

/// Settings for the layer-probing schedule.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HierarchyConfig {
    /// Deepest cumulative removal ratio probed, in (0,1).
    pub max_ratio: f64,
    /// Number of non-zero removal ratios per round (the curve has this many
    /// structural samples plus the frozen-retrain sample).
    pub samples: usize,
    /// Number of independent probe rounds.
    pub rounds: usize,
    /// Divisor that brings the structural accuracy drop onto the same
    /// magnitude as the frozen-retrain drop.
    pub stability_scale: f64,
    /// Convex weight on the frozen-retrain component, in (0,1).
    pub control: f64,
    /// Minimum Pearson correlation with the flattest round's curve for a
    /// round to be kept during aggregation.
    pub correlation_min: f64,
    /// Retraining epochs after each structural removal step.
    pub retrain_epochs: usize,
    /// Retraining epochs for the frozen-parameter probe.
    pub freeze_epochs: usize,
    /// Learning rate for all probe retraining (typically the final rate of
    /// the recipe that trained the base model).
    pub retrain_lr: f32,
    pub batch_size: usize,
    pub momentum: f32,
}

impl HierarchyConfig {
    /// Conventional defaults for everything except the probe sizes and the
    /// retraining recipe, which depend on the experiment.
    pub fn new(samples: usize, rounds: usize, retrain_epochs: usize, retrain_lr: f32) -> Self {
        HierarchyConfig {
            max_ratio: 0.96,
            samples,
            rounds,
            stability_scale: 10.0,
            control: 2.0 / 3.0,
            correlation_min: 0.6,
            retrain_epochs,
            freeze_epochs: 1,
            retrain_lr,
            batch_size: 64,
            momentum: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_ratio > 0.0 && self.max_ratio < 1.0) {
            return Err(Error::Config(format!(
                "max removal ratio {} is outside (0, 1)",
                self.max_ratio
            )));
        }
        if self.samples == 0 {
            return Err(Error::Config("need at least one removal ratio per round".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("need at least one probe round".into()));
        }
        if !(self.stability_scale > 0.0) {
            return Err(Error::Config(format!(
                "stability scale {} must be positive",
                self.stability_scale
            )));
        }
        if !(self.control > 0.0 && self.control < 1.0) {
            return Err(Error::Config(format!(
                "control factor {} is outside (0, 1)",
                self.control
            )));
        }
        if !self.correlation_min.is_finite() {
            return Err(Error::Config("correlation threshold must be finite".into()));
        }
        if self.retrain_epochs == 0 || self.freeze_epochs == 0 {
            return Err(Error::Config("probe retraining needs at least one epoch".into()));
        }
        self.train_config(1, 0).validate()
    }

    /// The cumulative removal-ratio schedule: `samples + 1` uniform steps
    /// from 0 to `max_ratio` inclusive.
    pub fn ratio_set(&self) -> Vec<f64> {
        ratio_set(self.samples, self.max_ratio)
    }

    fn train_config(&self, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: self.batch_size,
            schedule: vec![(0, self.retrain_lr)],
            momentum: self.momentum,
            shuffle: true,
            seed,
        }
    }
}

/// Uniform removal-ratio schedule {0, r/t, 2r/t, …, r} with `t + 1` entries.
pub fn ratio_set(samples: usize, max_ratio: f64) -> Vec<f64> {
    (0..=samples).map(|i| i as f64 * max_ratio / samples as f64).collect()
}

/// Accuracy shift caused by freezing a layer and retraining the rest.
pub fn reliability(frozen_acc: f64, baseline_acc: f64) -> f64 {
    frozen_acc - baseline_acc
}

/// Scaled accuracy drop between the frozen-retrain probe and the deepest
/// structural cut.
pub fn stability(frozen_acc: f64, deepest_acc: f64, scale: f64, max_ratio: f64) -> f64 {
    (frozen_acc - deepest_acc) / (scale * max_ratio)
}

/// Convex blend of the two components; `control` weights the frozen-retrain
/// side and must lie strictly inside (0,1).
pub fn sensitiveness(reliability: f64, stability: f64, control: f64) -> Result<f64> {
    if !(control > 0.0 && control < 1.0) {
        return Err(Error::Config(format!("control factor {control} is outside (0, 1)")));
    }
    Ok(combine(reliability, stability, control))
}

fn combine(reliability: f64, stability: f64, control: f64) -> f64 {
    control * reliability + (1.0 - control) * stability
}

/// Population variance of an accuracy curve (zero for fewer than two
/// samples).
pub fn round_variance(curve: &[f64]) -> f64 {
    if curve.len() < 2 {
        return 0.0;
    }
    let n = curve.len() as f64;
    let mean = curve.iter().sum::<f64>() / n;
    curve.iter().map(|&a| (a - mean) * (a - mean)).sum::<f64>() / n
}

/// Index of the curve with the smallest variance; ties resolve to the
/// earliest index.
pub fn flattest_round<C: AsRef<[f64]>>(curves: &[C]) -> usize {
    let mut best = 0;
    let mut best_var = f64::INFINITY;
    for (i, c) in curves.iter().enumerate() {
        let v = round_variance(c.as_ref());
        if v < best_var {
            best = i;
            best_var = v;
        }
    }
    best
}

/// Sample Pearson correlation. Returns 0 when either input is constant or
/// shorter than two entries (no linear relationship is measurable); the
/// result is clamped to [−1, 1].
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidRequest(format!(
            "correlation inputs have different lengths ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Ok(0.0);
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok((cov / libm::sqrt(va * vb)).clamp(-1.0, 1.0))
}

/// Raw accuracy grid from a full probe run.
///
/// `curves[p][m]` is the accuracy curve of layer `layers[p]` in round `m`:
/// entry 0 is the frozen-retrain sample and entries `1..` the structural
/// samples at the ascending ratio schedule.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundRecord {
    /// Test accuracy of the unmodified base model.
    pub baseline: f64,
    /// Cumulative removal-ratio schedule (first entry 0).
    pub ratios: Vec<f64>,
    /// Model layer indices probed, ascending.
    pub layers: Vec<usize>,
    pub curves: Vec<Vec<Vec<f64>>>,
}

impl RoundRecord {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidRequest("record covers no layers".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::InvalidRequest(
                    "record layers must be strictly ascending".into(),
                ));
            }
        }
        if self.curves.len() != self.layers.len() {
            return Err(Error::InvalidRequest("one curve set per layer required".into()));
        }
        if self.ratios.len() < 2 || self.ratios[0] != 0.0 {
            return Err(Error::InvalidRequest(
                "ratio schedule must start at 0 and include a removal step".into(),
            ));
        }
        let rounds = self.curves[0].len();
        for (p, per_round) in self.curves.iter().enumerate() {
            if per_round.len() != rounds || rounds == 0 {
                return Err(Error::InvalidRequest(format!(
                    "layer {} has an incomplete round set",
                    self.layers[p]
                )));
            }
            for curve in per_round {
                if curve.len() != self.ratios.len() {
                    return Err(Error::InvalidRequest(format!(
                        "layer {} has a curve of length {} for a {}-step schedule",
                        self.layers[p],
                        curve.len(),
                        self.ratios.len()
                    )));
                }
                for &acc in curve {
                    if !(0.0..=1.0).contains(&acc) {
                        return Err(Error::InvalidRequest(format!(
                            "accuracy {acc} is outside [0, 1]"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn rounds(&self) -> usize {
        self.curves.first().map(|c| c.len()).unwrap_or(0)
    }

    pub fn layer_pos(&self, layer: usize) -> Option<usize> {
        self.layers.iter().position(|&l| l == layer)
    }

    /// Structural samples of one curve (the frozen-retrain entry dropped).
    pub fn structural(&self, layer_pos: usize, round: usize) -> &[f64] {
        &self.curves[layer_pos][round][1..]
    }
}

/// Aggregated result for one probed layer.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerSensitivity {
    pub layer: usize,
    /// Mean frozen-retrain accuracy shift over the kept rounds.
    pub reliability: f64,
    /// Mean scaled structural drop over the kept rounds.
    pub stability: f64,
    /// Final score: `control·reliability + (1−control)·stability` of the
    /// stored components, exactly.
    pub score: f64,
    /// Per-round scores before fluctuation filtering.
    pub per_round: Vec<f64>,
    /// Round whose structural curve had the lowest variance.
    pub flattest: usize,
    /// Rounds that passed the correlation screen (always includes
    /// `flattest`), ascending.
    pub kept: Vec<usize>,
}

/// Per-layer scores plus the baseline they were measured against.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SensitivityReport {
    pub baseline: f64,
    pub control: f64,
    pub layers: Vec<LayerSensitivity>,
}

impl SensitivityReport {
    pub fn score_of(&self, layer: usize) -> Option<f64> {
        self.layers.iter().find(|l| l.layer == layer).map(|l| l.score)
    }

    /// Layer indices ordered by descending score; ties resolve to the lower
    /// layer index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<&LayerSensitivity> = self.layers.iter().collect();
        order.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.layer.cmp(&b.layer)));
        order.into_iter().map(|l| l.layer).collect()
    }
}

/// Filters fluctuating rounds and averages the rest into per-layer scores.
///
/// For each layer the round with the flattest structural curve anchors a
/// correlation screen: rounds whose curves correlate with the anchor above
/// the configured threshold are kept (the anchor always is), and the kept
/// rounds' components are averaged.
pub fn aggregate(record: &RoundRecord, cfg: &HierarchyConfig) -> Result<SensitivityReport> {
    cfg.validate()?;
    record.validate()?;
    let rounds = record.rounds();
    let mut layers = Vec::with_capacity(record.layers.len());
    for (p, &layer) in record.layers.iter().enumerate() {
        let curves: Vec<&[f64]> = (0..rounds).map(|m| record.structural(p, m)).collect();
        let flattest = flattest_round(&curves);
        let mut kept = Vec::new();
        for m in 0..rounds {
            if m == flattest || pearson(curves[m], curves[flattest])? > cfg.correlation_min {
                kept.push(m);
            }
        }
        let per_round: Vec<f64> = (0..rounds)
            .map(|m| {
                let curve = &record.curves[p][m];
                let rel = reliability(curve[0], record.baseline);
                let stab =
                    stability(curve[0], *curve.last().unwrap(), cfg.stability_scale, cfg.max_ratio);
                combine(rel, stab, cfg.control)
            })
            .collect();
        let inv = 1.0 / kept.len() as f64;
        let rel = kept
            .iter()
            .map(|&m| reliability(record.curves[p][m][0], record.baseline))
            .sum::<f64>()
            * inv;
        let stab = kept
            .iter()
            .map(|&m| {
                let curve = &record.curves[p][m];
                stability(curve[0], *curve.last().unwrap(), cfg.stability_scale, cfg.max_ratio)
            })
            .sum::<f64>()
            * inv;
        layers.push(LayerSensitivity {
            layer,
            reliability: rel,
            stability: stab,
            score: combine(rel, stab, cfg.control),
            per_round,
            flattest,
            kept,
        });
    }
    Ok(SensitivityReport { baseline: record.baseline, control: cfg.control, layers })
}

fn cell_context(e: Error, layer: usize, round: usize, step: usize) -> Error {
    let tag = |m: String| format!("layer {layer}, round {round}, ratio step {step}: {m}");
    match e {
        Error::Training { epoch, message } => Error::Training { epoch, message: tag(message) },
        Error::Constraint(m) => Error::Constraint(tag(m)),
        Error::InvalidRequest(m) => Error::InvalidRequest(tag(m)),
        other => other,
    }
}

/// Measures one (layer, round) accuracy curve on clones of `net`.
///
/// Entry 0: freeze the layer, retrain briefly, evaluate. Entries `1..`:
/// remove filters randomly and progressively (each step continuing from the
/// previous step's pruned model) up to the cumulative ratio schedule,
/// retraining and evaluating at each step. Every random draw is seeded from
/// `(master_seed, layer, round, step)` only, so cells can run in any order —
/// or concurrently — with identical results.
pub fn measure_cell(
    net: &Network,
    train_split: &DatasetSplit,
    test_split: &DatasetSplit,
    cfg: &HierarchyConfig,
    layer: usize,
    round: usize,
    master_seed: u64,
) -> Result<Vec<f64>> {
    let ratios = cfg.ratio_set();
    let mut curve = Vec::with_capacity(ratios.len());

    let mut frozen = net.clone();
    frozen.freeze(layer)?;
    let job = derive_seed(master_seed, &[layer as u64, round as u64, 0]);
    let tc = cfg.train_config(cfg.freeze_epochs, derive_seed(job, &[1]));
    train(&mut frozen, train_split, &tc).map_err(|e| cell_context(e, layer, round, 0))?;
    curve.push(evaluate(&frozen, test_split)?.0);
    drop(frozen);

    let width = net
        .original_width(layer)
        .ok_or_else(|| Error::InvalidRequest(format!("layer {layer} is not a conv layer")))?
        as usize;
    let mut pruned = net.clone();
    let mut removed = 0usize;
    for (step, &ratio) in ratios.iter().enumerate().skip(1) {
        let job = derive_seed(master_seed, &[layer as u64, round as u64, step as u64]);
        let target = surgery::removal_target(ratio, width);
        if target > removed {
            let ids = surgery::select_filters(
                &pruned,
                layer,
                target - removed,
                SelectionStrategy::Random { seed: derive_seed(job, &[0]) },
            )
            .map_err(|e| cell_context(e, layer, round, step))?;
            pruned = surgery::remove_filters(&pruned, layer, &ids)
                .map_err(|e| cell_context(e, layer, round, step))?;
            removed = target;
        }
        let tc = cfg.train_config(cfg.retrain_epochs, derive_seed(job, &[1]));
        train(&mut pruned, train_split, &tc).map_err(|e| cell_context(e, layer, round, step))?;
        curve.push(evaluate(&pruned, test_split)?.0);
    }
    Ok(curve)
}

/// Runs the full probe serially — every prunable layer, every round — and
/// aggregates the scores.
pub fn run_hierarchy(
    net: &Network,
    train_split: &DatasetSplit,
    test_split: &DatasetSplit,
    cfg: &HierarchyConfig,
    master_seed: u64,
) -> Result<(RoundRecord, SensitivityReport)> {
    cfg.validate()?;
    let layers = surgery::prunable_layers(net);
    if layers.is_empty() {
        return Err(Error::Constraint("model has no prunable conv layers".into()));
    }
    let baseline = evaluate(net, test_split)?.0;
    let mut curves = Vec::with_capacity(layers.len());
    for &layer in &layers {
        let mut per_round = Vec::with_capacity(cfg.rounds);
        for round in 0..cfg.rounds {
            per_round.push(measure_cell(
                net,
                train_split,
                test_split,
                cfg,
                layer,
                round,
                master_seed,
            )?);
        }
        curves.push(per_round);
    }
    let record = RoundRecord { baseline, ratios: cfg.ratio_set(), layers, curves };
    let report = aggregate(&record, cfg)?;
    Ok((record, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LayerKind, ModelSpec, Network};
    use crate::rng::Rng;
    use crate::tensor::Tensor4;
    use approx::assert_relative_eq;

    #[test]
    fn ratio_schedule_is_uniform_and_inclusive() {
        let r = ratio_set(4, 0.96);
        assert_eq!(r.len(), 5);
        for (i, want) in [0.0, 0.24, 0.48, 0.72, 0.96].iter().enumerate() {
            assert_relative_eq!(r[i], want, max_relative = 1e-12);
        }
        assert_eq!(ratio_set(1, 0.96), vec![0.0, 0.96]);
        let r = ratio_set(3, 0.75);
        for (i, want) in [0.0, 0.25, 0.5, 0.75].iter().enumerate() {
            assert_relative_eq!(r[i], want, max_relative = 1e-12);
        }
    }

    #[test]
    fn component_formulas_match_hand_values() {
        assert_relative_eq!(reliability(0.9251, 0.920), 5.1e-3, max_relative = 1e-9);
        assert_relative_eq!(reliability(0.9899, 0.99), -1.0e-4, max_relative = 1e-6);
        assert_relative_eq!(stability(0.90, 0.804, 10.0, 0.96), 0.01, max_relative = 1e-12);
        assert_eq!(stability(0.9, 0.9, 10.0, 0.96), 0.0);
        // 2/3·5.1e-3 + 1/3·4.0e-3 = 14.2e-3/3
        assert_relative_eq!(
            sensitiveness(5.1e-3, 4.0e-3, 2.0 / 3.0).unwrap(),
            4.7333e-3,
            max_relative = 1e-4
        );
        // 2/3·(−7.0e-4) + 1/3·2.5e-4 = −11.5e-4/3
        assert_relative_eq!(
            sensitiveness(-7.0e-4, 2.5e-4, 2.0 / 3.0).unwrap(),
            -3.8333e-4,
            max_relative = 1e-4
        );
        let x = 0.123;
        for g in [0.1, 0.5, 0.9] {
            assert_relative_eq!(sensitiveness(x, x, g).unwrap(), x, max_relative = 1e-12);
        }
        assert!(sensitiveness(0.0, 0.0, 0.0).is_err());
        assert!(sensitiveness(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn variance_is_population_and_translation_invariant() {
        assert_eq!(round_variance(&[0.75, 0.75, 0.75]), 0.0);
        assert_relative_eq!(round_variance(&[0.8, 0.9]), 0.0025, max_relative = 1e-12);
        let base = [0.1, 0.4, 0.2, 0.9];
        let shifted: Vec<f64> = base.iter().map(|x| x + 0.05).collect();
        assert_relative_eq!(
            round_variance(&base),
            round_variance(&shifted),
            max_relative = 1e-9
        );
        assert_eq!(round_variance(&[0.5]), 0.0);
    }

    #[test]
    fn flattest_picks_min_variance_with_low_tie() {
        // Variances: 0.01, 0.0025, 0.09 → index 1.
        let curves = vec![vec![0.5, 0.7], vec![0.8, 0.9], vec![0.1, 0.7]];
        assert_eq!(flattest_round(&curves), 1);
        // Equal variances tie toward the earlier round.
        let tied = vec![vec![0.8, 0.9], vec![0.1, 0.2], vec![0.5, 0.5]];
        assert_eq!(flattest_round(&tied), 2);
        // Exactly representable values make the variances exactly equal, so
        // the tie must go to the earlier round.
        let equal = vec![vec![0.25, 0.5], vec![0.75, 1.0]];
        assert_eq!(flattest_round(&equal), 0);
        assert_eq!(flattest_round(&[vec![0.1, 0.9]]), 0);
    }

    #[test]
    fn correlation_matches_definition() {
        let a = [0.1, 0.5, 0.9];
        assert_relative_eq!(pearson(&a, &a).unwrap(), 1.0, max_relative = 1e-12);
        let neg: Vec<f64> = a.iter().map(|x| 1.0 - x).collect();
        assert_relative_eq!(pearson(&a, &neg).unwrap(), -1.0, max_relative = 1e-12);
        assert_relative_eq!(
            pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 7.0]).unwrap(),
            0.9934,
            max_relative = 1e-4
        );
        assert_eq!(pearson(&[0.5, 0.5, 0.5], &a).unwrap(), 0.0);
        assert_eq!(pearson(&[0.1], &[0.2]).unwrap(), 0.0);
        assert!(pearson(&[0.1, 0.2], &[0.1]).is_err());
        // Affine response: ρ(a, αa+β) = sign(α).
        let up: Vec<f64> = a.iter().map(|x| 3.0 * x + 0.2).collect();
        assert_relative_eq!(pearson(&a, &up).unwrap(), 1.0, max_relative = 1e-12);
    }

    fn record_with(baseline: f64, curves: Vec<Vec<Vec<f64>>>, ratios: Vec<f64>) -> RoundRecord {
        RoundRecord { baseline, ratios, layers: vec![0], curves }
    }

    fn probe_cfg(samples: usize, rounds: usize) -> HierarchyConfig {
        let mut cfg = HierarchyConfig::new(samples, rounds, 1, 0.05);
        cfg.batch_size = 4;
        cfg
    }

    #[test]
    fn aggregate_single_round_keeps_it() {
        let cfg = probe_cfg(2, 1);
        let rec = record_with(0.8, vec![vec![vec![0.82, 0.7, 0.5]]], cfg.ratio_set());
        let rep = aggregate(&rec, &cfg).unwrap();
        let l = &rep.layers[0];
        assert_eq!(l.kept, vec![0]);
        assert_eq!(l.flattest, 0);
        assert_eq!(l.score, l.per_round[0]);
        let want = combine(0.82 - 0.8, (0.82 - 0.5) / 9.6, cfg.control);
        assert_relative_eq!(l.score, want, max_relative = 1e-12);
    }

    #[test]
    fn aggregate_drops_anticorrelated_round() {
        let cfg = probe_cfg(3, 3);
        // Rounds 0 and 1 rise together; round 2 falls. Round 0 is flattest.
        let curves = vec![vec![
            vec![0.80, 0.70, 0.71, 0.72],
            vec![0.80, 0.60, 0.65, 0.70],
            vec![0.80, 0.72, 0.71, 0.70],
        ]];
        let rec = record_with(0.8, curves, cfg.ratio_set());
        let rep = aggregate(&rec, &cfg).unwrap();
        let l = &rep.layers[0];
        assert_eq!(l.flattest, 0);
        assert_eq!(l.kept, vec![0, 1]);
        assert_relative_eq!(
            l.score,
            (l.per_round[0] + l.per_round[1]) / 2.0,
            max_relative = 1e-12
        );
        // The stored components reproduce the score exactly.
        assert_eq!(l.score, combine(l.reliability, l.stability, cfg.control));
    }

    #[test]
    fn aggregate_keeps_identical_rounds() {
        let cfg = probe_cfg(2, 3);
        let one = vec![0.81, 0.75, 0.66];
        let rec = record_with(0.8, vec![vec![one.clone(), one.clone(), one]], cfg.ratio_set());
        let rep = aggregate(&rec, &cfg).unwrap();
        let l = &rep.layers[0];
        // Identical curves are all constant-correlated (ρ = 0 here), so only
        // the flattest survives — and the mean equals the common value.
        assert!(l.kept.contains(&l.flattest));
        assert_relative_eq!(l.score, l.per_round[0], max_relative = 1e-12);
    }

    #[test]
    fn record_validation_rejects_malformed_grids() {
        let cfg = probe_cfg(2, 1);
        let good = record_with(0.8, vec![vec![vec![0.8, 0.7, 0.6]]], cfg.ratio_set());
        good.validate().unwrap();
        let mut short = good.clone();
        short.curves[0][0].pop();
        assert!(short.validate().is_err());
        let mut oob = good.clone();
        oob.curves[0][0][1] = 1.5;
        assert!(oob.validate().is_err());
        let mut empty = good.clone();
        empty.layers.clear();
        empty.curves.clear();
        assert!(empty.validate().is_err());
    }

    #[test]
    fn config_validation_bounds() {
        assert!(probe_cfg(2, 2).validate().is_ok());
        let mut bad = probe_cfg(2, 2);
        bad.max_ratio = 1.0;
        assert!(bad.validate().is_err());
        let mut bad = probe_cfg(2, 2);
        bad.control = 1.0;
        assert!(bad.validate().is_err());
        let mut bad = probe_cfg(2, 2);
        bad.stability_scale = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = probe_cfg(2, 2);
        bad.rounds = 0;
        assert!(bad.validate().is_err());
        let mut bad = probe_cfg(2, 2);
        bad.retrain_epochs = 0;
        assert!(bad.validate().is_err());
    }

    fn toy_net_and_data() -> (Network, DatasetSplit, DatasetSplit) {
        let spec = ModelSpec {
            name: "probe-toy".into(),
            input: (1, 6, 6),
            num_classes: 2,
            layers: vec![
                LayerKind::Conv { out_ch: 4, k: 3, stride: 1, pad: 1 },
                LayerKind::ReLU,
                LayerKind::Conv { out_ch: 3, k: 3, stride: 1, pad: 1 },
                LayerKind::ReLU,
                LayerKind::Flatten,
                LayerKind::Dense { out: 2 },
            ],
            blocks: vec![],
            skips: vec![],
        };
        let mut net = Network::assemble(spec).unwrap();
        net.init(11);
        let mut rng = Rng::new(99);
        let make = |rng: &mut Rng, n: usize| {
            let mut imgs = Tensor4::zeros(n, 1, 6, 6);
            let mut labels = Vec::with_capacity(n);
            for s in 0..n {
                let class = (rng.next_u64() & 1) as u32;
                labels.push(class);
                for v in imgs.sample_mut(s) {
                    let noise = rng.next_f32() * 0.2;
                    *v = if class == 0 { noise } else { 0.8 + noise };
                }
            }
            DatasetSplit::new(imgs, labels, 2).unwrap()
        };
        let train = make(&mut rng, 16);
        let test = make(&mut rng, 8);
        (net, train, test)
    }

    #[test]
    fn minimal_probe_produces_full_grid() {
        let (net, train_split, test_split) = toy_net_and_data();
        let cfg = probe_cfg(1, 1);
        let (rec, rep) = run_hierarchy(&net, &train_split, &test_split, &cfg, 7).unwrap();
        assert_eq!(rec.layers, vec![0, 2]);
        assert_eq!(rec.curves.len(), 2);
        assert_eq!(rec.curves[0].len(), 1);
        assert_eq!(rec.curves[0][0].len(), 2);
        rec.validate().unwrap();
        assert_eq!(rep.layers.len(), 2);
        assert_eq!(rep.layers[0].kept, vec![0]);
    }

    #[test]
    fn probe_is_deterministic_and_cells_are_independent() {
        let (net, train_split, test_split) = toy_net_and_data();
        let mut cfg = probe_cfg(2, 2);
        cfg.retrain_epochs = 1;
        let (rec_a, _) = run_hierarchy(&net, &train_split, &test_split, &cfg, 42).unwrap();
        let (rec_b, _) = run_hierarchy(&net, &train_split, &test_split, &cfg, 42).unwrap();
        assert_eq!(rec_a, rec_b);
        // A cell measured on its own matches the grid entry bit for bit.
        let cell = measure_cell(&net, &train_split, &test_split, &cfg, 2, 1, 42).unwrap();
        assert_eq!(cell, rec_a.curves[1][1]);
        // A different master seed changes at least something.
        let (rec_c, _) = run_hierarchy(&net, &train_split, &test_split, &cfg, 43).unwrap();
        assert_ne!(rec_a, rec_c);
    }

    #[test]
    fn progressive_removal_caps_at_one_survivor() {
        let (net, train_split, test_split) = toy_net_and_data();
        // Layer 0 has 4 filters; deepest ratio 0.96 targets round(3.84) = 4,
        // capped to 3 removals, leaving exactly one filter.
        let cfg = probe_cfg(2, 1);
        let curve = measure_cell(&net, &train_split, &test_split, &cfg, 0, 0, 5).unwrap();
        assert_eq!(curve.len(), 3);
        for &acc in &curve {
            assert!((0.0..=1.0).contains(&acc));
        }
    }
}
