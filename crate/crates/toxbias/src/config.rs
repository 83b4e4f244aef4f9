//! The declarative run configuration (TOML).
//!
//! ```toml
//! format_version = 1
//! seed = 0
//! folds = 5
//! identity_weight = 3.0   # c
//! aux_task = "identities" # or "subtypes", "none"
//! power = -5.0
//!
//! [model]
//! hidden = 32
//! dense = 64
//! dropout_rate = 0.2
//!
//! [training]
//! epochs = 30
//! batch_size = 64
//! learning_rate = 0.001
//! clip_norm = 5.0          # 0 disables clipping
//! patience = 5             # 0 disables early stopping
//! alpha = 0.6
//! alpha_grid = [0.2, 0.4, 0.5, 0.6, 0.8]
//! grid_search = false
//!
//! [embeddings]
//! source1 = "glove.txt"    # optional; missing words get small random vectors
//! dim1 = 50
//! source2 = "fasttext.vec"
//! dim2 = 50
//! oov_seed = 0
//!
//! [propagation]            # optional; required when identity labels are missing
//! hidden = 32
//! dense = 64
//! epochs = 10
//! ```
//!
//! Every key is optional and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toxbias_core::corpus::{AuxTask, LabelSchema};
use toxbias_core::loss::LossConfig;
use toxbias_core::metrics::DEFAULT_POWER;
use toxbias_core::nn::{Hyper, Pooling};
use toxbias_core::train::{AdamConfig, ExperimentConfig, PropagationConfig, TrainConfig};

use crate::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub seed: u64,
    pub folds: usize,
    pub identity_weight: f64,
    pub aux_task: AuxTask,
    pub power: f64,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub embeddings: EmbeddingSection,
    pub propagation: Option<PropagationSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: usize,
    pub dense: usize,
    pub dropout_rate: f64,
    pub pooling: Pooling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
    pub patience: usize,
    pub alpha: f64,
    pub alpha_grid: Vec<f64>,
    pub grid_search: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub source1: Option<PathBuf>,
    pub dim1: usize,
    pub source2: Option<PathBuf>,
    pub dim2: usize,
    pub oov_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationSection {
    pub hidden: usize,
    pub dense: usize,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format_version: CONFIG_VERSION,
            seed: 0,
            folds: 5,
            identity_weight: 3.0,
            aux_task: AuxTask::Identities,
            power: DEFAULT_POWER,
            model: ModelSection::default(),
            training: TrainingSection::default(),
            embeddings: EmbeddingSection::default(),
            propagation: None,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { hidden: 32, dense: 64, dropout_rate: 0.2, pooling: Pooling::Attention }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        let adam = AdamConfig::default();
        let t = TrainConfig::default();
        TrainingSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            clip_norm: adam.clip_norm.unwrap_or(0.0),
            patience: t.patience.unwrap_or(0),
            alpha: LossConfig::default().alpha,
            alpha_grid: t.alpha_grid,
            grid_search: false,
        }
    }
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection { source1: None, dim1: 50, source2: None, dim2: 50, oov_seed: 0 }
    }
}

impl Default for PropagationSection {
    fn default() -> Self {
        PropagationSection {
            hidden: 32,
            dense: 64,
            dropout_rate: 0.2,
            epochs: 10,
            batch_size: 64,
            learning_rate: 1e-3,
            patience: 3,
        }
    }
}

fn nonzero(v: usize) -> Option<usize> {
    (v > 0).then_some(v)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if cfg.format_version != CONFIG_VERSION {
            return Err(Error::Incompatible(format!(
                "{}: config format version {} is not supported (expected {CONFIG_VERSION})",
                path.display(),
                cfg.format_version
            )));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable in TOML")
    }

    /// Resolves embedding source paths relative to the config file's directory.
    pub fn resolve_paths(&mut self, config_path: &Path) {
        let base = config_path.parent().unwrap_or(Path::new(""));
        for src in [&mut self.embeddings.source1, &mut self.embeddings.source2].into_iter().flatten() {
            if src.is_relative() {
                *src = base.join(&*src);
            }
        }
    }

    pub fn heads(&self, schema: &LabelSchema) -> usize {
        match self.aux_task {
            AuxTask::None => 0,
            AuxTask::Identities => schema.identities.len(),
            AuxTask::Subtypes => schema.subtypes.len(),
        }
    }

    pub fn train_config(&self, heads: usize) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            adam: AdamConfig {
                learning_rate: t.learning_rate,
                beta1: t.beta1,
                beta2: t.beta2,
                epsilon: t.epsilon,
                clip_norm: (t.clip_norm > 0.0).then_some(t.clip_norm),
            },
            seed: self.seed,
            loss: LossConfig { alpha: t.alpha, c: self.identity_weight, heads, ..LossConfig::default() },
            aux_task: self.aux_task,
            patience: nonzero(t.patience),
            alpha_grid: t.alpha_grid.clone(),
        }
    }

    pub fn experiment(&self, embed_dim: usize, schema: &LabelSchema) -> ExperimentConfig {
        let heads = self.heads(schema);
        let m = &self.model;
        let hyper = Hyper {
            embed_dim,
            hidden: m.hidden,
            dense1: m.dense,
            dense2: m.dense,
            heads,
            dropout_rate: m.dropout_rate,
            pooling: m.pooling,
        };
        ExperimentConfig {
            hyper,
            train: self.train_config(heads),
            folds: self.folds,
            grid_search: self.training.grid_search,
            propagation: self.propagation.as_ref().map(|p| self.propagation_config(p, embed_dim, schema)),
            p: self.power,
        }
    }

    pub fn propagation_config(&self, p: &PropagationSection, embed_dim: usize, schema: &LabelSchema) -> PropagationConfig {
        let k = schema.identities.len();
        let mut train = self.train_config(k);
        train.epochs = p.epochs;
        train.batch_size = p.batch_size;
        train.adam.learning_rate = p.learning_rate;
        train.patience = nonzero(p.patience);
        train.aux_task = AuxTask::Identities;
        train.loss.alpha = 0.0;
        PropagationConfig {
            hyper: Hyper {
                embed_dim,
                hidden: p.hidden,
                dense1: p.dense,
                dense2: p.dense,
                heads: k,
                dropout_rate: p.dropout_rate,
                pooling: Pooling::Mean,
            },
            train,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig { propagation: Some(PropagationSection::default()), ..RunConfig::default() };
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[training]\nalpah = 0.5").is_err());
    }

    #[test]
    fn zero_disables_clipping_and_patience() {
        let cfg: RunConfig = toml::from_str("[training]\nclip_norm = 0.0\npatience = 0").unwrap();
        let t = cfg.train_config(0);
        assert_eq!(t.adam.clip_norm, None);
        assert_eq!(t.patience, None);
    }
}
