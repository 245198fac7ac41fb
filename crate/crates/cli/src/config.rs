//! Declarative experiment configuration: a TOML file that fully determines
//! a run together with the master seed.

use std::fs;
use std::path::{Path, PathBuf};

use prunesense_core::error::Error;
use prunesense_core::planner::PruneConfig;
use prunesense_core::sensitivity::HierarchyConfig;
use prunesense_core::train::TrainConfig;
use prunesense_core::Result;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Cifar100,
}

impl DatasetKind {
    pub fn num_classes(self) -> usize {
        match self {
            DatasetKind::Mnist | DatasetKind::Cifar10 => 10,
            DatasetKind::Cifar100 => 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    /// Directory holding the dataset files in their standard layout.
    pub dir: PathBuf,
    /// Stratified subset size for the training split; 0 keeps everything.
    #[serde(default)]
    pub train_subset: usize,
    /// Stratified subset size for the test split; 0 keeps everything.
    #[serde(default)]
    pub test_subset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning-rate schedule as (starting epoch, rate) pairs.
    pub schedule: Vec<(usize, f32)>,
    pub momentum: f32,
    #[serde(default = "default_true")]
    pub shuffle: bool,
}

fn default_true() -> bool {
    true
}

impl TrainSection {
    pub fn to_core(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            schedule: self.schedule.clone(),
            momentum: self.momentum,
            shuffle: self.shuffle,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchySection {
    /// Structural samples per round (progressive removal depths).
    pub samples: usize,
    pub rounds: usize,
    pub retrain_epochs: usize,
    pub retrain_lr: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freeze_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f32>,
}

impl HierarchySection {
    pub fn to_core(&self) -> HierarchyConfig {
        let mut cfg = HierarchyConfig::new(
            self.samples,
            self.rounds,
            self.retrain_epochs,
            self.retrain_lr,
        );
        if let Some(v) = self.max_ratio {
            cfg.max_ratio = v;
        }
        if let Some(v) = self.stability_scale {
            cfg.stability_scale = v;
        }
        if let Some(v) = self.control {
            cfg.control = v;
        }
        if let Some(v) = self.correlation_min {
            cfg.correlation_min = v;
        }
        if let Some(v) = self.freeze_epochs {
            cfg.freeze_epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.momentum {
            cfg.momentum = v;
        }
        cfg
    }
}

fn default_threshold_frac() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSection {
    /// Grouping gap threshold as a fraction of the score range.
    #[serde(default = "default_threshold_frac")]
    pub threshold_frac: f64,
    pub prune: PruneConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Model-zoo name (e.g. "conv4-mini", "vgg16-cifar", "resnet18-mini").
    pub model: String,
    /// Default output directory; the command line can override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Default master seed for subcommands that allow omitting --seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    /// Worker threads for the sensitivity grid; 0 or absent means serial.
    #[serde(default)]
    pub workers: usize,
    pub dataset: DatasetSection,
    pub train: TrainSection,
    pub hierarchy: HierarchySection,
    pub planner: PlannerSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        prunesense_core::zoo::build_model(&self.model)?;
        if self.train.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        self.train.to_core(0).validate()?;
        self.hierarchy.to_core().validate()?;
        if !(self.planner.threshold_frac > 0.0 && self.planner.threshold_frac < 1.0) {
            return Err(Error::Config(format!(
                "planner.threshold_frac {} is outside (0, 1)",
                self.planner.threshold_frac
            )));
        }
        self.planner.prune.validate()?;
        Ok(())
    }
}
