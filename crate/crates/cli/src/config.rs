use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gafi::data::{load_csv, make_blobs, make_rings, normalize, split, SplitSpec};
use gafi::filtering::{FilterPolicy, DEFAULT_MAX_ATTEMPT_FACTOR};
use gafi::models::{ClassifierKind, TrainingBudget};
use gafi::pipeline::{FastPipelineConfig, GafiConfig, GeneratorRecipe, DEFAULT_RECYCLE_PERIODS};
use gafi::seed::derive_seed;
use gafi::synthesis::{NoisePolicy, RecycleSchedule};
use gafi::Dataset;
use serde::{Deserialize, Serialize};

/// A configuration problem; the process exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    Rings {
        #[serde(default = "two")]
        classes: usize,
        per_class: usize,
        radii: Vec<f64>,
        noise: f64,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
    },
    Blobs {
        per_class: usize,
        centers: Vec<Vec<f64>>,
        stddevs: Vec<f64>,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
    },
    /// Header-free `label,f1,...,fd` files.
    Csv {
        train: PathBuf,
        test: PathBuf,
        num_classes: usize,
        feature_dim: usize,
    },
}

fn two() -> usize {
    2
}

fn default_train_fraction() -> f64 {
    0.75
}

fn default_classifier() -> ClassifierKind {
    ClassifierKind::Mlp { hidden: 32 }
}

fn default_accurate_repeats() -> usize {
    3
}

fn default_k_list() -> Vec<usize> {
    vec![1]
}

fn default_attempt_factor() -> usize {
    DEFAULT_MAX_ATTEMPT_FACTOR
}

fn default_recycle_periods() -> Vec<RecycleSchedule> {
    DEFAULT_RECYCLE_PERIODS.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetSpec,
    /// Standardize features with statistics of the training split.
    #[serde(default)]
    pub normalize: bool,
    pub generator: GeneratorRecipe,
    #[serde(default = "default_classifier")]
    pub classifier: ClassifierKind,
    #[serde(default = "TrainingBudget::desk_default")]
    pub budget: TrainingBudget,
    #[serde(default)]
    pub fast: FastPipelineConfig,
    #[serde(default = "default_accurate_repeats")]
    pub accurate_repeats: usize,
    #[serde(default)]
    pub noise: NoisePolicy,
    #[serde(default = "FilterPolicy::off")]
    pub filter: FilterPolicy,
    #[serde(default = "default_k_list")]
    pub k_list: Vec<usize>,
    #[serde(default = "default_attempt_factor")]
    pub max_attempt_factor: usize,
    #[serde(default = "default_recycle_periods")]
    pub recycle_periods: Vec<RecycleSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn gafi(&self) -> GafiConfig {
        GafiConfig {
            recipe: self.generator.clone(),
            classifier: self.classifier,
            budget: self.budget.clone(),
            fast: self.fast.clone(),
            accurate_repeats: self.accurate_repeats,
            noise: self.noise,
            filter: self.filter,
            k_list: self.k_list.clone(),
            max_attempt_factor: self.max_attempt_factor,
            seed: self.seed,
        }
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        let invalid = |e: gafi::Error| ConfigError(e.to_string());
        self.gafi().validate().map_err(invalid)?;
        for p in &self.recycle_periods {
            p.validate().map_err(invalid)?;
        }
        if self.recycle_periods.is_empty() {
            return Err(ConfigError("recycle_periods must not be empty".into()).into());
        }
        match &self.dataset {
            DatasetSpec::Rings { train_fraction, .. } | DatasetSpec::Blobs { train_fraction, .. } => {
                SplitSpec::new(*train_fraction, 0).map_err(invalid)?;
            }
            DatasetSpec::Csv { num_classes, feature_dim, .. } => {
                if *num_classes == 0 || *feature_dim == 0 {
                    return Err(ConfigError("dataset: num_classes and feature_dim must be positive".into()).into());
                }
            }
        }
        Ok(())
    }

    /// Train and test splits described by `dataset`.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let data_seed = derive_seed(self.seed, "data", &[]);
        let split_seed = derive_seed(self.seed, "split", &[]);
        let invalid = |e: gafi::Error| ConfigError(format!("dataset: {e}"));
        let (train, test) = match &self.dataset {
            DatasetSpec::Rings {
                classes,
                per_class,
                radii,
                noise,
                train_fraction,
            } => {
                let all = make_rings(*classes, *per_class, radii, *noise, data_seed).map_err(invalid)?;
                split(&all, SplitSpec::new(*train_fraction, split_seed).map_err(invalid)?)?
            }
            DatasetSpec::Blobs {
                per_class,
                centers,
                stddevs,
                train_fraction,
            } => {
                let all = make_blobs(centers.len(), *per_class, centers, stddevs, data_seed).map_err(invalid)?;
                split(&all, SplitSpec::new(*train_fraction, split_seed).map_err(invalid)?)?
            }
            DatasetSpec::Csv {
                train,
                test,
                num_classes,
                feature_dim,
            } => (
                load_csv(train, *num_classes, *feature_dim).context("loading training data")?,
                load_csv(test, *num_classes, *feature_dim).context("loading test data")?,
            ),
        };
        if self.normalize {
            let (train, mut others, _) = normalize(&train, &[&test])?;
            return Ok((train, others.remove(0)));
        }
        Ok((train, test))
    }
}
