//! JSON run configuration shared by the CLI commands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::ArchSpec;
use crate::data::{self, Dataset};
use crate::distill::DistillConfig;
use crate::error::{NwsError, Result};
use crate::tensor::Float;
use crate::til::TrainHyper;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    /// Seeded generator; train and test draws use different noise seeds.
    Synthetic {
        classes: usize,
        per_class: usize,
        test_per_class: usize,
        channels: usize,
        height: usize,
        width: usize,
        noise_std: Float,
    },
    /// Directory with `images.idx` + `labels.idx`.
    Idx { path: PathBuf },
    /// Directory of class folders holding raw blobs.
    Folders { path: PathBuf },
    /// Like `Idx`/`Folders` but pre-split: `train/` and `test/` subdirs.
    IdxSplit { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: Float,
    pub momentum: Float,
    pub weight_decay: Float,
    #[serde(default)]
    pub milestones: Vec<usize>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-5,
            milestones: vec![],
        }
    }
}

fn default_precision() -> String {
    "f32".into()
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_precision")]
    pub precision: String,
    /// Architecture name understood by [`ArchSpec`]: currently "desk".
    pub arch: String,
    pub pool_size: usize,
    pub beta: Float,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub pretrain_epochs: usize,
    pub task_epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub random_init: bool,
    pub dataset: DatasetSpec,
    /// Original class ids used to pretrain the pools.
    pub pretrain_classes: Vec<usize>,
    /// Original class ids per sequential task, in order.
    pub task_split: Vec<Vec<usize>>,
    /// Held-out fraction for file-backed datasets (synthetic generates its
    /// own test draw).
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| NwsError::Config(format!("{}: {}", path.display(), e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.precision != "f32" && self.precision != "f64" {
            return Err(NwsError::Config(format!(
                "precision must be f32 or f64, got {}",
                self.precision
            )));
        }
        let built = if cfg!(feature = "f64") { "f64" } else { "f32" };
        if self.precision != built {
            return Err(NwsError::Config(format!(
                "config wants {} but this build computes in {}",
                self.precision, built
            )));
        }
        self.arch_spec()?;
        if self.beta <= 0.0 {
            return Err(NwsError::Config("beta must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(NwsError::Config("batch_size must be positive".into()));
        }
        if self.task_split.is_empty() || self.task_split.iter().any(|t| t.is_empty()) {
            return Err(NwsError::Config("task_split must list classes per task".into()));
        }
        if self.pretrain_classes.is_empty() {
            return Err(NwsError::Config("pretrain_classes must not be empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &c in self.task_split.iter().flatten() {
            if !seen.insert(c) {
                return Err(NwsError::Config(format!(
                    "class {} appears in more than one task",
                    c
                )));
            }
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(NwsError::Config("test_fraction must be in [0, 1)".into()));
        }
        match &self.dataset {
            DatasetSpec::Synthetic { classes, per_class, test_per_class, .. } => {
                if *per_class == 0 || *test_per_class == 0 {
                    return Err(NwsError::Config("synthetic per-class counts must be positive".into()));
                }
                for &c in self.task_split.iter().flatten().chain(&self.pretrain_classes) {
                    if c >= *classes {
                        return Err(NwsError::Config(format!(
                            "class {} out of range for {} synthetic classes",
                            c, classes
                        )));
                    }
                }
            }
            DatasetSpec::Idx { path }
            | DatasetSpec::Folders { path }
            | DatasetSpec::IdxSplit { path } => {
                if !path.exists() {
                    return Err(NwsError::Config(format!(
                        "dataset path {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn arch_spec(&self) -> Result<ArchSpec> {
        match self.arch.as_str() {
            "desk" => Ok(ArchSpec::desk(self.pool_size)),
            other => Err(NwsError::Config(format!(
                "unknown architecture {:?} (try \"desk\")",
                other
            ))),
        }
    }

    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            beta: self.beta,
            epochs: self.pretrain_epochs,
            batch_size: self.batch_size,
            learning_rate: self.optimizer.learning_rate,
            momentum: self.optimizer.momentum,
            weight_decay: self.optimizer.weight_decay,
            milestones: self.optimizer.milestones.clone(),
            seed: self.seed,
            ..DistillConfig::default()
        }
    }

    pub fn train_hyper(&self) -> TrainHyper {
        TrainHyper {
            epochs: self.task_epochs,
            batch_size: self.batch_size,
            learning_rate: self.optimizer.learning_rate,
            momentum: self.optimizer.momentum,
            weight_decay: self.optimizer.weight_decay,
            milestones: self.optimizer.milestones.clone(),
            seed: self.seed,
            random_init: self.random_init,
            ..TrainHyper::default()
        }
    }

    /// Slices the full train/test pools into the configured task sequence.
    pub fn build_tasks(&self, train: &Dataset, test: &Dataset) -> Vec<crate::til::TaskSpec> {
        self.task_split
            .iter()
            .enumerate()
            .map(|(i, classes)| crate::til::TaskSpec {
                task_id: i,
                num_classes: classes.len(),
                train: train.subset_with_remap(classes),
                test: test.subset_with_remap(classes),
            })
            .collect()
    }

    /// Loads (train, test) pools of the full dataset, before any class
    /// subsetting.
    pub fn load_dataset(&self) -> Result<(Dataset, Dataset)> {
        match &self.dataset {
            DatasetSpec::Synthetic {
                classes,
                per_class,
                test_per_class,
                channels,
                height,
                width,
                noise_std,
            } => {
                let train = data::synthetic_dataset(
                    *classes, *per_class, *channels, *height, *width, *noise_std, self.seed,
                );
                let test = data::synthetic_dataset(
                    *classes,
                    *test_per_class,
                    *channels,
                    *height,
                    *width,
                    *noise_std,
                    self.seed ^ 0x5EED_7E57,
                );
                Ok((train, test))
            }
            DatasetSpec::Idx { path } => {
                let full = data::load_idx_dir(path)?;
                Ok(split_train_test(&full, self.test_fraction, self.seed))
            }
            DatasetSpec::Folders { path } => {
                let full = data::load_class_folders(path)?;
                Ok(split_train_test(&full, self.test_fraction, self.seed))
            }
            DatasetSpec::IdxSplit { path } => {
                let train = data::load_idx_dir(&path.join("train"))?;
                let test = data::load_idx_dir(&path.join("test"))?;
                Ok((train, test))
            }
        }
    }
}

/// Deterministic holdout split by seeded shuffle.
pub fn split_train_test(full: &Dataset, test_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let order = full.shuffled_indices(seed ^ 0x7E57_5EED);
    let n_test = ((full.len() as f64) * test_fraction).round() as usize;
    let il = full.channels * full.height * full.width;
    let gather = |idx: &[usize]| {
        let mut images = Vec::with_capacity(idx.len() * il);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            images.extend_from_slice(&full.images[i * il..(i + 1) * il]);
            labels.push(full.labels[i]);
        }
        Dataset {
            images,
            labels,
            channels: full.channels,
            height: full.height,
            width: full.width,
        }
    };
    (gather(&order[n_test..]), gather(&order[..n_test]))
}

/// Baseline desk-benchmark configuration: pools pretrained on four classes,
/// then three two-way tasks on the remaining six.
pub fn desk_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        precision: default_precision(),
        arch: "desk".into(),
        pool_size: 64,
        beta: 0.5,
        optimizer: OptimizerConfig {
            learning_rate: 0.03,
            momentum: 0.9,
            weight_decay: 1e-5,
            milestones: vec![],
        },
        pretrain_epochs: 25,
        task_epochs: 6,
        batch_size: 32,
        random_init: false,
        dataset: DatasetSpec::Synthetic {
            classes: 10,
            per_class: 80,
            test_per_class: 30,
            channels: 3,
            height: 12,
            width: 12,
            noise_std: 0.8,
        },
        pretrain_classes: vec![0, 1, 2, 3],
        task_split: vec![vec![4, 7], vec![5, 8], vec![6, 9]],
        test_fraction: default_test_fraction(),
    }
}
