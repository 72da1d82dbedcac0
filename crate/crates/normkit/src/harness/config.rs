//! Run configuration: a versioned JSON schema with no hidden defaults in
//! serialized form — every field is explicit on disk.

use serde::{Deserialize, Serialize};

use super::task::TaskKind;
use crate::nets::{GruNormScope, InitScheme, OptimizerConfig};
use crate::normalizers::{NormVariant, NormalizerKind};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Gru {
        hidden_dim: usize,
        norm_scope: GruNormScope,
    },
    Mlp {
        hidden_dims: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub task: TaskKind,
    /// `None` trains the unnormalized baseline.
    pub normalizer: Option<NormalizerKind>,
    pub optimizer: OptimizerConfig,
    pub init: InitScheme,
    pub steps: u64,
    pub eval_every: u64,
    pub batch_size: usize,
    pub train_instances: usize,
    pub eval_instances: usize,
    pub seeds: Vec<u64>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.steps < 1 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        if self.eval_every < 1 {
            return Err(Error::InvalidConfig("eval_every must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.train_instances < 1 || self.eval_instances < 1 {
            return Err(Error::InvalidConfig(
                "train_instances and eval_instances must be >= 1".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        self.task.validate()?;
        self.optimizer.validate()?;
        if let Some(norm) = &self.normalizer {
            norm.validate()?;
            if !norm.is_vector_normalizer() {
                return Err(Error::InvalidConfig(format!(
                    "{} has no backward pass and cannot train",
                    norm.name()
                )));
            }
        }
        match (&self.model, &self.task) {
            (ModelConfig::Gru { hidden_dim, .. }, t) if t.is_sequence() => {
                if *hidden_dim < 1 {
                    return Err(Error::InvalidConfig("hidden_dim must be >= 1".into()));
                }
            }
            (ModelConfig::Mlp { hidden_dims }, TaskKind::Spiral2d { .. }) => {
                if hidden_dims.is_empty() || hidden_dims.iter().any(|&d| d < 1) {
                    return Err(Error::InvalidConfig(
                        "mlp hidden_dims must be non-empty and positive".into(),
                    ));
                }
            }
            (m, t) => {
                return Err(Error::InvalidConfig(format!(
                    "model {m:?} cannot train on task {t:?}"
                )))
            }
        }
        Ok(())
    }

    /// True when the configured partial statistic collapses to a single
    /// element on this model; flagged as a warning in reports.
    pub fn partial_subset_len(&self) -> Option<usize> {
        if let (Some(kind), ModelConfig::Gru { hidden_dim, .. }) = (&self.normalizer, &self.model)
        {
            if let NormVariant::PRmsNorm { p } = kind.variant {
                return Some(crate::normalizers::partial_len(*hidden_dim, p));
            }
        }
        None
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(json)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// The standard desk-scale copy-task setup: 32-unit GRU on
/// `SequenceCopy(len 20)`, Adam at 1e-3, 5 seeds. The cell normalizes
/// the candidate pre-activation; normalizing the sigmoid gates as well
/// costs mean-shift expressiveness that the desk-scale comparisons are
/// sensitive to.
pub fn default_copy_config(normalizer: Option<NormalizerKind>) -> RunConfig {
    RunConfig {
        schema_version: SCHEMA_VERSION,
        model: ModelConfig::Gru {
            hidden_dim: 32,
            norm_scope: GruNormScope::CandidateOnly,
        },
        task: TaskKind::SequenceCopy { len: 20, vocab: 8 },
        normalizer,
        optimizer: OptimizerConfig::default(),
        init: InitScheme::default(),
        steps: 2000,
        eval_every: 100,
        batch_size: 16,
        train_instances: 256,
        eval_instances: 64,
        seeds: vec![1, 2, 3, 4, 5],
    }
}
