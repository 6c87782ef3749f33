//! Flat TOML run configuration. Every key is required when a file is given;
//! without `--config` the bundled desk configuration is used.

use std::fs;
use std::path::Path;

use pprnet::augment::BalanceConfig;
use pprnet::eval::ExperimentConfig;
use pprnet::inception::{InceptionConfig, TrainConfig};
use pprnet::signal::{PreprocessConfig, WindowingConfig};
use pprnet::transfer::TransferPlan;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DESK_CONFIG: &str = include_str!("../../../configs/desk.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub profile: String,
    pub members: usize,

    pub window_length_s: f64,
    pub source_overlap: f64,
    pub overlap: f64,
    pub target_rate_hz: u32,
    pub drop_channels: Vec<String>,
    pub bipolar_pairs: Vec<String>,

    pub target_ppr: usize,
    pub target_total: usize,
    pub num_segments: usize,

    pub validation_fraction: f64,
    pub pretrain_learning_rate: f64,
    pub pretrain_batch_size: usize,
    pub pretrain_epochs: usize,
    pub pretrain_patience: usize,

    pub tunable_scope: Vec<String>,
    pub head_rebuild: bool,
    pub tune_learning_rate: f64,
    pub tune_batch_size: usize,
    pub tune_epochs: usize,
    pub tune_patience: usize,

    pub dense_widths: Vec<usize>,
    pub dense_learning_rate: f64,
    pub dense_batch_size: usize,
    pub dense_epochs: usize,

    pub inference_batch: usize,
}

/// `missing field `x`` → `x`.
fn missing_key(message: &str) -> Option<&str> {
    let rest = message.split("missing field `").nth(1)?;
    rest.split('`').next()
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            match missing_key(&msg) {
                Some(key) => CliError::usage(format!("{origin}: missing config key `{key}`")),
                None => {
                    let line = e
                        .span()
                        .map(|s| text[..s.start.min(text.len())].lines().count().max(1));
                    match line {
                        Some(l) => CliError::usage(format!("{origin}:{l}: {msg}")),
                        None => CliError::usage(format!("{origin}: {msg}")),
                    }
                }
            }
        })
    }

    pub fn load(path: Option<&Path>) -> Result<(Self, String), CliError> {
        match path {
            None => Ok((Self::parse(DESK_CONFIG, "bundled desk config")?, DESK_CONFIG.to_string())),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
                Ok((Self::parse(&text, &p.display().to_string())?, text))
            }
        }
    }

    pub fn arch(&self) -> Result<InceptionConfig, CliError> {
        Ok(InceptionConfig::from_profile(&self.profile)?)
    }

    fn pairs(&self) -> Result<Vec<(String, String)>, CliError> {
        self.bipolar_pairs
            .iter()
            .map(|p| {
                p.split_once('-')
                    .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                    .ok_or_else(|| CliError::usage(format!("bipolar pair `{p}` is not of the form A-B")))
            })
            .collect()
    }

    pub fn preprocess(&self, overlap: f64) -> Result<PreprocessConfig, CliError> {
        Ok(PreprocessConfig {
            drop_channels: self.drop_channels.clone(),
            bipolar_pairs: self.pairs()?,
            target_rate_hz: self.target_rate_hz,
            windowing: WindowingConfig::new(self.window_length_s, overlap)?,
        })
    }

    pub fn balance(&self) -> BalanceConfig {
        BalanceConfig {
            target_ppr: self.target_ppr,
            target_total: self.target_total,
            num_segments: self.num_segments,
        }
    }

    pub fn pretraining(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.pretrain_learning_rate,
            batch_size: self.pretrain_batch_size,
            max_epochs: self.pretrain_epochs,
            patience: self.pretrain_patience,
            validation_fraction: self.validation_fraction,
            ..TrainConfig::source_default()
        }
    }

    pub fn plan(&self) -> Result<TransferPlan, CliError> {
        Ok(TransferPlan {
            tunable_scope: TransferPlan::scope_from_names(&self.tunable_scope)?,
            head_rebuild: self.head_rebuild,
            tuning: TrainConfig {
                learning_rate: self.tune_learning_rate,
                batch_size: self.tune_batch_size,
                max_epochs: self.tune_epochs,
                patience: self.tune_patience,
                validation_fraction: self.validation_fraction,
                ..TrainConfig::tuning_default()
            },
        })
    }

    pub fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        Ok(ExperimentConfig {
            plan: self.plan()?,
            balance: self.balance(),
            dense_widths: self.dense_widths.clone(),
            dense_training: TrainConfig {
                learning_rate: self.dense_learning_rate,
                batch_size: self.dense_batch_size,
                max_epochs: self.dense_epochs,
                validation_fraction: self.validation_fraction,
                ..TrainConfig::source_default()
            },
            rate_hz: self.target_rate_hz as f64,
            inference_batch: self.inference_batch,
            seed: self.seed,
        })
    }
}
