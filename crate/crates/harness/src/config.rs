//! Flat JSON training configuration with dotted keys and named presets.

use std::fs;
use std::path::{Path, PathBuf};

use mru_core::data::Task;
use mru_core::model::CompareMode;
use mru_core::{DType, EncoderKind, ModelConfig, MruConfig, MruVariant, RangeSet};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{HarnessError, Result};

pub const PRESETS: [&str; 3] = ["race-like", "searchqa-like", "narrativeqa-like"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Name of the preset the remaining keys were layered over.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,

    #[serde(rename = "model.task")]
    pub task: Task,
    #[serde(rename = "model.dim")]
    pub dim: usize,
    #[serde(rename = "model.compare")]
    pub compare: CompareMode,
    #[serde(rename = "model.max_span_len")]
    pub max_span_len: usize,
    #[serde(rename = "model.attention")]
    pub attention: bool,

    #[serde(rename = "embedding.dim")]
    pub embedding_dim: usize,
    #[serde(rename = "embedding.frozen")]
    pub frozen_embeddings: bool,
    #[serde(
        rename = "embedding.pretrained",
        skip_serializing_if = "Option::is_none"
    )]
    pub pretrained: Option<PathBuf>,

    #[serde(rename = "encoder.kind")]
    pub encoder: EncoderKind,
    /// Redundant with `encoder.kind`; checked for agreement when given.
    #[serde(rename = "encoder.variant", skip_serializing_if = "Option::is_none")]
    pub variant: Option<MruVariant>,
    #[serde(rename = "encoder.ranges")]
    pub ranges: RangeSet,
    #[serde(rename = "encoder.bidirectional")]
    pub bidirectional: bool,
    #[serde(rename = "encoder.bias_inside")]
    pub bias_inside: bool,
    #[serde(rename = "encoder.raw_output_gate")]
    pub raw_output_gate: bool,
    #[serde(rename = "encoder.apply_to_query")]
    pub apply_to_query: bool,

    #[serde(rename = "train.lr")]
    pub lr: f64,
    #[serde(rename = "train.batch_size")]
    pub batch_size: usize,
    #[serde(rename = "train.epochs")]
    pub epochs: usize,
    #[serde(rename = "train.patience")]
    pub patience: usize,
    #[serde(rename = "train.dropout")]
    pub dropout: f64,
    #[serde(rename = "train.max_len")]
    pub max_len: usize,
    #[serde(rename = "train.seed")]
    pub seed: u64,
    #[serde(rename = "train.dtype")]
    pub dtype: DType,
    #[serde(rename = "train.checkpoint", skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,

    #[serde(rename = "data.train", skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(rename = "data.dev", skip_serializing_if = "Option::is_none")]
    pub dev: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            preset: None,
            task: Task::Mcq,
            dim: 64,
            compare: CompareMode::default(),
            max_span_len: 15,
            attention: true,
            embedding_dim: 50,
            frozen_embeddings: true,
            pretrained: None,
            encoder: EncoderKind::Mru,
            variant: None,
            ranges: RangeSet::default(),
            bidirectional: false,
            bias_inside: false,
            raw_output_gate: false,
            apply_to_query: false,
            lr: 1e-3,
            batch_size: 32,
            epochs: 50,
            patience: 10,
            dropout: 0.1,
            max_len: 500,
            seed: 0,
            dtype: DType::Fp32,
            checkpoint: None,
            train: None,
            dev: None,
        }
    }
}

impl TrainConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (task, lr, batch_size, max_len) = match name {
            "race-like" => (Task::Mcq, 3e-4, 64, 500),
            "searchqa-like" => (Task::Span, 1e-3, 256, 200),
            "narrativeqa-like" => (Task::Span, 1e-3, 32, 1100),
            other => {
                return Err(HarnessError::config(
                    "preset",
                    format!(
                        "unknown preset `{other}` (expected one of {})",
                        PRESETS.join(", ")
                    ),
                ))
            }
        };
        Ok(TrainConfig {
            preset: Some(name.to_string()),
            task,
            lr,
            batch_size,
            max_len,
            ..Default::default()
        })
    }

    /// Parses a JSON object; a `preset` key selects the base the other keys
    /// override, otherwise the defaults are the base.
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let bad = |msg: String| HarnessError::config(origin, msg);
        let value: Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        let Value::Object(user) = value else {
            return Err(bad("expected a JSON object".into()));
        };
        let base = match user.get("preset") {
            None | Some(Value::Null) => TrainConfig::default(),
            Some(Value::String(name)) => {
                TrainConfig::preset(name).map_err(|e| bad(e.to_string()))?
            }
            Some(_) => return Err(bad("`preset` must be a string".into())),
        };
        let Value::Object(mut merged) = serde_json::to_value(&base).expect("config serializes")
        else {
            unreachable!("config is an object")
        };
        merged.extend(user);
        let cfg: TrainConfig =
            serde_json::from_value(Value::Object(merged)).map_err(|e| bad(e.to_string()))?;
        cfg.validate().map_err(|e| bad(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Flat key → value view, as stored in checkpoints.
    pub fn to_map(&self) -> Map<String, Value> {
        match serde_json::to_value(self).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!("config is an object"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::config("validation", msg));
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("train.dropout {} outside [0, 1)", self.dropout));
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("train.lr {} must be positive", self.lr));
        }
        if self.dim == 0 || self.embedding_dim == 0 {
            return bad("model.dim and embedding.dim must be positive".into());
        }
        if self.max_len == 0 || self.max_span_len == 0 {
            return bad("train.max_len and model.max_span_len must be positive".into());
        }
        if let Some(v) = self.variant {
            let implied = match self.encoder {
                EncoderKind::SimpleMru => Some(MruVariant::Simple),
                EncoderKind::Mru | EncoderKind::MruLstm => Some(MruVariant::Recurrent),
                _ => None,
            };
            if implied.is_some_and(|i| i != v) {
                return bad(format!(
                    "encoder.variant {v:?} contradicts encoder.kind {}",
                    self.encoder
                ));
            }
        }
        Ok(())
    }

    pub fn mru_config(&self) -> MruConfig {
        let variant = match self.encoder {
            EncoderKind::SimpleMru => MruVariant::Simple,
            _ => self.variant.unwrap_or(MruVariant::Recurrent),
        };
        MruConfig {
            variant,
            ranges: self.ranges.clone(),
            bidirectional: self.bidirectional,
            bias_inside: self.bias_inside,
            raw_output_gate: self.raw_output_gate,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            task: self.task,
            vocab_size,
            embedding_dim: self.embedding_dim,
            dim: self.dim,
            encoder: self.encoder,
            mru: self.mru_config(),
            compare: self.compare,
            attention: self.attention,
            apply_to_query: self.apply_to_query,
            max_span_len: self.max_span_len,
            dropout: self.dropout,
            frozen_embeddings: self.frozen_embeddings,
        }
    }
}
