//! Training options from flags and TOML files, and their resolution.
//!
//! Precedence: flags, then the config file, then the dataset directory
//! environment variables, then built-in defaults.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use binnet::data::Checkpoint;
use binnet::{Preset, Regularizer, TrainConfig};
use clap::Args;
use serde::{Deserialize, Deserializer, Serialize};

pub const MNIST_DIR_ENV: &str = "BINNET_MNIST_DIR";
pub const CIFAR10_DIR_ENV: &str = "BINNET_CIFAR10_DIR";

/// Every training option, each optional so sources can be layered.
#[derive(Args, Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainOptions {
    /// mnist or cifar10
    #[arg(long)]
    #[serde(deserialize_with = "parsed")]
    pub dataset: Option<Preset>,
    /// none, det or stoch
    #[arg(long)]
    #[serde(deserialize_with = "parsed")]
    pub regularizer: Option<Regularizer>,
    /// Default 10 for mnist, 5 for cifar10
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Initial learning rate
    #[arg(long)]
    pub eta0: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Directory with the dataset files under their standard names
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use only the first N training images (0 = all)
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Use only the first N validation images (0 = all)
    #[arg(long)]
    pub val_limit: Option<usize>,
}

fn parsed<'de, D, T>(d: D) -> std::result::Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: FromStr,
    T::Err: Display,
{
    let s = String::deserialize(d)?;
    s.parse().map(Some).map_err(serde::de::Error::custom)
}

impl TrainOptions {
    /// Reads a TOML file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut opts: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut opts.data_dir, &mut opts.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(opts)
    }

    /// Fills every unset field from `lower`.
    pub fn or(self, lower: Self) -> Self {
        Self {
            dataset: self.dataset.or(lower.dataset),
            regularizer: self.regularizer.or(lower.regularizer),
            epochs: self.epochs.or(lower.epochs),
            seed: self.seed.or(lower.seed),
            eta0: self.eta0.or(lower.eta0),
            momentum: self.momentum.or(lower.momentum),
            batch_size: self.batch_size.or(lower.batch_size),
            data_dir: self.data_dir.or(lower.data_dir),
            out: self.out.or(lower.out),
            train_limit: self.train_limit.or(lower.train_limit),
            val_limit: self.val_limit.or(lower.val_limit),
        }
    }

    /// Applies defaults. When resuming, the checkpoint supplies the
    /// dataset and hyperparameters, and any option that contradicts it is
    /// an error.
    pub fn resolve(&self, resume: Option<&Checkpoint>) -> Result<TrainPlan> {
        let Some(out) = self.out.clone() else {
            bail!("no output directory given (--out)");
        };
        let config = match resume {
            None => {
                let defaults = TrainConfig::default();
                let dataset = self.dataset.context("no dataset given (--dataset mnist|cifar10)")?;
                TrainConfig {
                    regularizer: self.regularizer.unwrap_or(defaults.regularizer),
                    eta0: self.eta0.unwrap_or(defaults.eta0),
                    momentum: self.momentum.unwrap_or(defaults.momentum),
                    batch_size: self.batch_size.unwrap_or(defaults.batch_size),
                    epochs: self.epochs.unwrap_or(default_epochs(dataset)),
                    seed: self.seed.unwrap_or(defaults.seed),
                }
            }
            Some(ckpt) => {
                let saved = &ckpt.config;
                conflict("regularizer", self.regularizer, saved.regularizer)?;
                conflict("eta0", self.eta0, saved.eta0)?;
                conflict("momentum", self.momentum, saved.momentum)?;
                conflict("batch-size", self.batch_size, saved.batch_size)?;
                conflict("seed", self.seed, saved.seed)?;
                TrainConfig {
                    epochs: self.epochs.unwrap_or(saved.epochs),
                    ..saved.clone()
                }
            }
        };
        config.validate()?;
        let dataset = match (self.dataset, resume) {
            (Some(d), _) => d,
            (None, Some(ckpt)) => preset_for_shape(ckpt.network.input_shape())?,
            (None, None) => unreachable!("checked above"),
        };
        Ok(TrainPlan {
            dataset,
            data_dir: self.data_dir.clone().unwrap_or_else(|| default_data_dir(dataset)),
            out,
            train_limit: self.train_limit.unwrap_or(0),
            val_limit: self.val_limit.unwrap_or(0),
            config,
        })
    }
}

fn conflict<T: PartialEq + std::fmt::Debug>(name: &str, given: Option<T>, saved: T) -> Result<()> {
    match given {
        Some(v) if v != saved => bail!("--{name} {v:?} conflicts with the checkpoint's {saved:?}"),
        _ => Ok(()),
    }
}

/// A fully resolved training run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainPlan {
    pub dataset: Preset,
    pub data_dir: PathBuf,
    pub out: PathBuf,
    pub train_limit: usize,
    pub val_limit: usize,
    pub config: TrainConfig,
}

pub fn default_epochs(dataset: Preset) -> usize {
    match dataset {
        Preset::Mnist => 10,
        Preset::Cifar10 => 5,
    }
}

/// `$BINNET_MNIST_DIR` or `$BINNET_CIFAR10_DIR` if set, else
/// `data/mnist` or `data/cifar10`.
pub fn default_data_dir(dataset: Preset) -> PathBuf {
    let env = match dataset {
        Preset::Mnist => MNIST_DIR_ENV,
        Preset::Cifar10 => CIFAR10_DIR_ENV,
    };
    std::env::var_os(env)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new("data").join(dataset.name()))
}

/// The preset whose images have this shape.
pub fn preset_for_shape(shape: &[usize]) -> Result<Preset> {
    [Preset::Mnist, Preset::Cifar10]
        .into_iter()
        .find(|p| p.input_shape() == shape)
        .with_context(|| format!("no dataset has {} images", shape_str(shape)))
}

pub fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}
