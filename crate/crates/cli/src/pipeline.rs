//! Staged end-to-end runs: data → base model → sensitivity grid → grouping
//! → iterative pruning, with every stage persisting its artifacts as soon
//! as it finishes. A failure stops the run but leaves everything already
//! written on disk, plus a metadata sidecar naming the failed stage.

use std::path::{Path, PathBuf};

use prunesense_core::count::{count_macs, count_params};
use prunesense_core::data::DatasetSplit;
use prunesense_core::error::Error;
use prunesense_core::model::Network;
use prunesense_core::planner::{group_layers, iterative_prune, GroupAssignment, PruneOutcome};
use prunesense_core::rng::derive_seed;
use prunesense_core::sensitivity::{aggregate, SensitivityReport};
use prunesense_core::train::{evaluate, train};
use prunesense_core::zoo;
use prunesense_core::Result;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetKind, ExperimentConfig};
use crate::data::{
    compute_norm_stats, load_cifar_raw, load_mnist_raw, normalize, stratified_subset, NormStats,
};
use crate::parallel::run_grid;
use crate::report;

/// How far a staged run should go.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Base,
    Sensitivity,
    Group,
    Prune,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::Base => "base",
            Stage::Sensitivity => "sensitivity",
            Stage::Group => "group",
            Stage::Prune => "prune",
        }
    }
}

pub mod files {
    pub const CONFIG: &str = "config.resolved.toml";
    pub const NORM_STATS: &str = "norm_stats.json";
    pub const BASE_METRICS: &str = "base_metrics.json";
    pub const BASE_CKPT: &str = "base.ckpt";
    pub const RECORD: &str = "record.json";
    pub const SENSITIVITY: &str = "sensitivity.json";
    pub const CURVES: &str = "curves.csv";
    pub const GROUPS: &str = "groups.json";
    pub const MASK: &str = "mask.json";
    pub const PRUNED_CKPT: &str = "pruned.ckpt";
    pub const ITERATIONS: &str = "iterations.jsonl";
    pub const OUTCOME: &str = "outcome.json";
    pub const SUMMARY: &str = "summary.csv";
    pub const META: &str = "meta.json";
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaseMetrics {
    pub model: String,
    pub params: u64,
    pub macs: u64,
    pub epoch_losses: Vec<f64>,
    pub test_accuracy: f64,
}

/// Prune-stage facts without the network itself.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub baseline_accuracy: f64,
    pub pruned_accuracy: f64,
    pub overall_ratio: f64,
    pub target_overall: f64,
    pub target_reached: bool,
    pub final_ratios: Vec<f64>,
    pub filters_removed: usize,
    pub pruned_params: u64,
    pub pruned_macs: u64,
}

pub struct RunArtifacts {
    pub out: PathBuf,
    pub stage_reached: Stage,
}

struct StagedRun<'a> {
    cfg: &'a ExperimentConfig,
    master_seed: u64,
    out: PathBuf,
    workers: usize,
    base_checkpoint: Option<PathBuf>,
}

/// Loads the configured dataset, applies stratified subsetting, and
/// normalizes with training-split statistics.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(DatasetSplit, DatasetSplit, NormStats)> {
    let classes = cfg.dataset.kind.num_classes();
    let (train_raw, test_raw) = match cfg.dataset.kind {
        DatasetKind::Mnist => load_mnist_raw(&cfg.dataset.dir)?,
        DatasetKind::Cifar10 => load_cifar_raw(&cfg.dataset.dir, 10)?,
        DatasetKind::Cifar100 => load_cifar_raw(&cfg.dataset.dir, 100)?,
    };
    let train_raw = stratified_subset(&train_raw, cfg.dataset.train_subset, classes)?;
    let test_raw = stratified_subset(&test_raw, cfg.dataset.test_subset, classes)?;
    let stats = compute_norm_stats(&train_raw);
    let train = normalize(&train_raw, &stats, classes)?;
    let test = normalize(&test_raw, &stats, classes)?;
    Ok((train, test, stats))
}

impl StagedRun<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn stage_base(&self, train_split: &DatasetSplit, test_split: &DatasetSplit) -> Result<Network> {
        let spec = zoo::build_model(&self.cfg.model)?;
        let params = count_params(&spec)?;
        let macs = count_macs(&spec, (spec.input.1, spec.input.2))?;
        let mut net = Network::assemble(spec)?;
        let mut epoch_losses = Vec::new();
        match &self.base_checkpoint {
            Some(ckpt) => report::read_checkpoint(ckpt, &mut net)?,
            None => {
                net.init(derive_seed(self.master_seed, &[0]));
                let tc = self.cfg.train.to_core(derive_seed(self.master_seed, &[1]));
                let stats = train(&mut net, train_split, &tc)?;
                epoch_losses = stats.epoch_losses;
            }
        }
        let accuracy = evaluate(&net, test_split)?.0;
        report::write_json(
            &self.path(files::BASE_METRICS),
            "base_metrics",
            &BaseMetrics {
                model: self.cfg.model.clone(),
                params,
                macs,
                epoch_losses,
                test_accuracy: accuracy,
            },
        )?;
        report::write_checkpoint(&self.path(files::BASE_CKPT), &net)?;
        Ok(net)
    }

    fn stage_sensitivity(
        &self,
        net: &Network,
        train_split: &DatasetSplit,
        test_split: &DatasetSplit,
    ) -> Result<SensitivityReport> {
        let hcfg = self.cfg.hierarchy.to_core();
        let record = run_grid(
            net,
            train_split,
            test_split,
            &hcfg,
            derive_seed(self.master_seed, &[2]),
            self.workers,
        )?;
        let rep = aggregate(&record, &hcfg)?;
        report::write_json(&self.path(files::RECORD), "round_record", &record)?;
        report::write_json(&self.path(files::SENSITIVITY), "sensitivity_report", &rep)?;
        report::write_curves_csv(&self.path(files::CURVES), &record)?;
        Ok(rep)
    }

    fn stage_group(&self, rep: &SensitivityReport) -> Result<GroupAssignment> {
        let groups = group_layers(rep, self.cfg.planner.threshold_frac)?;
        report::write_json(&self.path(files::GROUPS), "group_assignment", &groups)?;
        Ok(groups)
    }

    fn stage_prune(
        &self,
        net: &Network,
        groups: &GroupAssignment,
        train_split: &DatasetSplit,
        test_split: &DatasetSplit,
    ) -> Result<PruneOutcome> {
        let outcome = iterative_prune(
            net,
            groups,
            train_split,
            test_split,
            &self.cfg.planner.prune,
            derive_seed(self.master_seed, &[3]),
        )?;
        report::write_json(&self.path(files::MASK), "prune_mask", &outcome.mask)?;
        report::write_checkpoint(&self.path(files::PRUNED_CKPT), &outcome.net)?;
        report::write_iterations_jsonl(&self.path(files::ITERATIONS), &outcome.log)?;

        let pruned_spec = outcome.net.spec();
        let pruned_params = count_params(pruned_spec)?;
        let pruned_macs = count_macs(pruned_spec, (pruned_spec.input.1, pruned_spec.input.2))?;
        let filters_removed = outcome.mask.removed_total();
        report::write_json(
            &self.path(files::OUTCOME),
            "prune_outcome",
            &OutcomeSummary {
                baseline_accuracy: outcome.log.baseline,
                pruned_accuracy: outcome.accuracy,
                overall_ratio: outcome.overall,
                target_overall: self.cfg.planner.prune.target_overall,
                target_reached: outcome.target_reached,
                final_ratios: outcome.final_ratios.clone(),
                filters_removed,
                pruned_params,
                pruned_macs,
            },
        )?;

        let base_spec = zoo::build_model(&self.cfg.model)?;
        let removed_per_group: Vec<usize> = groups
            .groups
            .iter()
            .map(|layers| {
                layers
                    .iter()
                    .map(|&l| outcome.mask.0.get(&l).map_or(0, |ids| ids.len()))
                    .sum()
            })
            .collect();
        report::write_summary_csv(
            &self.path(files::SUMMARY),
            groups,
            &outcome.final_ratios,
            &removed_per_group,
            &report::SummaryTotals {
                base_params: count_params(&base_spec)?,
                base_macs: count_macs(&base_spec, (base_spec.input.1, base_spec.input.2))?,
                base_accuracy: outcome.log.baseline,
                pruned_params,
                pruned_macs,
                pruned_accuracy: outcome.accuracy,
                overall_ratio: outcome.overall,
                filters_removed,
            },
        )?;
        Ok(outcome)
    }

    fn run(&self, upto: Stage) -> Result<Stage> {
        report::write_bytes(&self.path(files::CONFIG), self.cfg.to_toml()?.as_bytes())?;
        let (train_split, test_split, stats) =
            load_dataset(self.cfg).map_err(|e| stage_err("data", e))?;
        report::write_json(&self.path(files::NORM_STATS), "norm_stats", &stats)?;

        let net = self
            .stage_base(&train_split, &test_split)
            .map_err(|e| stage_err(Stage::Base.name(), e))?;
        if upto == Stage::Base {
            return Ok(Stage::Base);
        }

        let rep = self
            .stage_sensitivity(&net, &train_split, &test_split)
            .map_err(|e| stage_err(Stage::Sensitivity.name(), e))?;
        if upto == Stage::Sensitivity {
            return Ok(Stage::Sensitivity);
        }

        let groups = self.stage_group(&rep).map_err(|e| stage_err(Stage::Group.name(), e))?;
        if upto == Stage::Group {
            return Ok(Stage::Group);
        }

        self.stage_prune(&net, &groups, &train_split, &test_split)
            .map_err(|e| stage_err(Stage::Prune.name(), e))?;
        Ok(Stage::Prune)
    }
}

/// Prefixes an error with the stage it happened in, keeping the variant
/// (and therefore the exit code) intact.
fn stage_err(stage: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("stage {stage}: {m}")),
        Error::InvalidRequest(m) => Error::InvalidRequest(format!("stage {stage}: {m}")),
        Error::Constraint(m) => Error::Constraint(format!("stage {stage}: {m}")),
        Error::Training { epoch, message } => Error::Training {
            epoch,
            message: format!("stage {stage}: {message}"),
        },
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("stage {stage}: {message}"),
        },
    }
}

/// Runs the staged flow up to `upto`, writing artifacts and the metadata
/// sidecar into `out`.
pub fn run_staged(
    cfg: &ExperimentConfig,
    master_seed: u64,
    out: &Path,
    workers: usize,
    base_checkpoint: Option<PathBuf>,
    upto: Stage,
) -> Result<RunArtifacts> {
    let started = report::unix_now();
    let run = StagedRun {
        cfg,
        master_seed,
        out: out.to_path_buf(),
        workers,
        base_checkpoint,
    };
    match run.run(upto) {
        Ok(reached) => {
            report::write_meta(
                &out.join(files::META),
                &report::RunMeta {
                    schema_version: report::SCHEMA_VERSION,
                    stage_reached: reached.name().to_string(),
                    error: None,
                    started_unix: started,
                    finished_unix: report::unix_now(),
                },
            )?;
            Ok(RunArtifacts { out: out.to_path_buf(), stage_reached: reached })
        }
        Err(e) => {
            // Best effort: the sidecar names the failing stage; artifacts
            // from completed stages are already on disk.
            let _ = report::write_meta(
                &out.join(files::META),
                &report::RunMeta {
                    schema_version: report::SCHEMA_VERSION,
                    stage_reached: "failed".to_string(),
                    error: Some(e.to_string()),
                    started_unix: started,
                    finished_unix: report::unix_now(),
                },
            );
            Err(e)
        }
    }
}

/// Loads a checkpoint produced by the staged flow back into a freshly
/// assembled copy of the configured model.
pub fn load_base(cfg: &ExperimentConfig, ckpt: &Path) -> Result<Network> {
    let spec = zoo::build_model(&cfg.model)?;
    let mut net = Network::assemble(spec)?;
    report::read_checkpoint(ckpt, &mut net)?;
    Ok(net)
}

/// Re-derives the pruned network recorded by a finished run: zoo spec +
/// stored mask + stored parameters.
pub fn load_pruned(cfg: &ExperimentConfig, out: &Path) -> Result<Network> {
    let spec = zoo::build_model(&cfg.model)?;
    let net = Network::assemble(spec)?;
    let mask: prunesense_core::surgery::PruneMask =
        report::read_json(&out.join(files::MASK), "prune_mask")?;
    let mut pruned = prunesense_core::surgery::apply_mask(&net, &mask)?;
    report::read_checkpoint(&out.join(files::PRUNED_CKPT), &mut pruned)?;
    Ok(pruned)
}
