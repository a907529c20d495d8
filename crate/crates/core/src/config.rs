//! Run configuration: one flat dotted-key namespace covering model
//! dimensions and training hyperparameters.
//!
//! Every key has a documented default; unknown keys are rejected. The
//! effective configuration is echoed into every checkpoint and report so a
//! recorded run can be reproduced by feeding the echo back verbatim.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::Error;
use crate::pose::{DEFAULT_WINDOW, MODEL_KEYPOINTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionalMode {
    /// Position embeddings are concatenated to each frame vector.
    Concat,
    /// Position embeddings are added to each frame vector.
    Additive,
}

impl PositionalMode {
    pub fn parse(s: &str) -> Result<PositionalMode, Error> {
        match s {
            "concat" => Ok(PositionalMode::Concat),
            "additive" => Ok(PositionalMode::Additive),
            other => Err(Error::Invalid(format!(
                "positional mode must be concat or additive, got {other:?}"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PositionalMode::Concat => "concat",
            PositionalMode::Additive => "additive",
        }
    }
}

/// Architecture dimensions. K is fixed by the keypoint pipeline for real
/// data; tests shrink it for fast gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub keypoints: usize,
    pub window: usize,
    pub class_count: usize,
    /// Working feature width F of the graph encoder.
    pub feature_width: usize,
    /// Layers per residual graph block (L).
    pub gcn_layers: usize,
    /// Stacked residual graph blocks (B).
    pub gcn_blocks: usize,
    /// Positional embedding width p (concat mode only).
    pub positional_width: usize,
    pub positional_mode: PositionalMode,
    pub bert_layers: usize,
    pub bert_heads: usize,
    /// Per-head width; 0 means the full model width.
    pub head_width: usize,
    /// Feed-forward hidden width; 0 means 4x the model width.
    pub ffn_width: usize,
    /// Divide attention logits by sqrt(head width) before the softmax.
    pub attention_scale: bool,
    /// Conventional transformer layer (residuals + layer norm) instead of
    /// the plain PFFN(attention) composition.
    pub standard_bert_residuals: bool,
}

impl ModelConfig {
    /// Width of one flattened per-frame spatial encoding (K * F).
    pub fn spatial_width(&self) -> usize {
        self.keypoints * self.feature_width
    }

    /// Transformer model width d.
    pub fn model_width(&self) -> usize {
        match self.positional_mode {
            PositionalMode::Concat => self.spatial_width() + self.positional_width,
            PositionalMode::Additive => self.spatial_width(),
        }
    }

    pub fn resolved_head_width(&self) -> usize {
        if self.head_width == 0 {
            self.model_width()
        } else {
            self.head_width
        }
    }

    pub fn resolved_ffn_width(&self) -> usize {
        if self.ffn_width == 0 {
            4 * self.model_width()
        } else {
            self.ffn_width
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let positive = [
            ("keypoints", self.keypoints),
            ("window", self.window),
            ("class_count", self.class_count),
            ("feature_width", self.feature_width),
            ("gcn_layers", self.gcn_layers),
            ("gcn_blocks", self.gcn_blocks),
            ("bert_heads", self.bert_heads),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Invalid(format!("{name} must be positive")));
            }
        }
        if self.positional_mode == PositionalMode::Concat && self.positional_width == 0 {
            return Err(Error::Invalid(
                "positional_width must be positive in concat mode".into(),
            ));
        }
        if self.standard_bert_residuals && self.resolved_head_width() != self.model_width() {
            return Err(Error::Invalid(
                "standard_bert_residuals requires head width equal to model width".into(),
            ));
        }
        Ok(())
    }

    /// Tiny dimensions for gradient checks: K=5, T=3, F=4, small widths.
    pub fn toy(class_count: usize) -> ModelConfig {
        ModelConfig {
            keypoints: 5,
            window: 3,
            class_count,
            feature_width: 4,
            gcn_layers: 2,
            gcn_blocks: 2,
            positional_width: 4,
            positional_mode: PositionalMode::Concat,
            bert_layers: 1,
            bert_heads: 2,
            head_width: 0,
            ffn_width: 16,
            attention_scale: true,
            standard_bert_residuals: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Global-norm gradient clip; 0 disables.
    pub grad_clip: f64,
    /// Stop once train top-1 reaches this percentage; 0 disables.
    pub target_top1: f64,
    pub seed: u64,
    pub threads: usize,
}

/// The full flat-key configuration for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub gcn_feature_width: usize,
    pub gcn_layers_per_block: usize,
    pub gcn_blocks: usize,
    pub bert_positional_width: usize,
    pub bert_positional_mode: PositionalMode,
    pub bert_layer_count: usize,
    pub bert_head_count: usize,
    pub bert_head_width: usize,
    pub bert_ffn_width: usize,
    pub bert_attention_scale: bool,
    pub bert_standard_residuals: bool,
    pub data_window: usize,
    /// 0 means derive from the dataset manifest.
    pub model_class_count: usize,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            gcn_feature_width: 64,
            gcn_layers_per_block: 2,
            gcn_blocks: 2,
            bert_positional_width: 16,
            bert_positional_mode: PositionalMode::Concat,
            bert_layer_count: 2,
            bert_head_count: 4,
            bert_head_width: 0,
            bert_ffn_width: 0,
            bert_attention_scale: true,
            bert_standard_residuals: false,
            data_window: DEFAULT_WINDOW,
            model_class_count: 0,
            train: TrainConfig {
                batch_size: 16,
                epochs: 100,
                learning_rate: 1e-3,
                weight_decay: 1e-8,
                grad_clip: 0.0,
                target_top1: 0.0,
                seed: 42,
                threads: 1,
            },
        }
    }
}

fn as_usize(key: &str, v: &serde_json::Value) -> Result<usize, Error> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| Error::Invalid(format!("{key}: expected a non-negative integer, got {v}")))
}

fn as_f64(key: &str, v: &serde_json::Value) -> Result<f64, Error> {
    v.as_f64()
        .ok_or_else(|| Error::Invalid(format!("{key}: expected a number, got {v}")))
}

fn as_bool(key: &str, v: &serde_json::Value) -> Result<bool, Error> {
    v.as_bool()
        .ok_or_else(|| Error::Invalid(format!("{key}: expected true/false, got {v}")))
}

fn as_str<'v>(key: &str, v: &'v serde_json::Value) -> Result<&'v str, Error> {
    v.as_str()
        .ok_or_else(|| Error::Invalid(format!("{key}: expected a string, got {v}")))
}

impl RunConfig {
    /// Apply one `key = value` setting. Unknown keys are rejected.
    pub fn apply(&mut self, key: &str, value: &serde_json::Value) -> Result<(), Error> {
        match key {
            "gcn.feature_width" => self.gcn_feature_width = as_usize(key, value)?,
            "gcn.layers_per_block" => self.gcn_layers_per_block = as_usize(key, value)?,
            "gcn.blocks" => self.gcn_blocks = as_usize(key, value)?,
            "bert.positional_width" => self.bert_positional_width = as_usize(key, value)?,
            "bert.positional_mode" => {
                self.bert_positional_mode = PositionalMode::parse(as_str(key, value)?)?
            }
            "bert.layer_count" => self.bert_layer_count = as_usize(key, value)?,
            "bert.head_count" => self.bert_head_count = as_usize(key, value)?,
            "bert.head_width" => self.bert_head_width = as_usize(key, value)?,
            "bert.ffn_width" => self.bert_ffn_width = as_usize(key, value)?,
            "bert.attention_scale" => self.bert_attention_scale = as_bool(key, value)?,
            "bert.standard_residuals" => self.bert_standard_residuals = as_bool(key, value)?,
            "data.window" => self.data_window = as_usize(key, value)?,
            "model.class_count" => self.model_class_count = as_usize(key, value)?,
            "train.batch_size" => self.train.batch_size = as_usize(key, value)?,
            "train.epochs" => self.train.epochs = as_usize(key, value)?,
            "train.learning_rate" => self.train.learning_rate = as_f64(key, value)?,
            "train.weight_decay" => self.train.weight_decay = as_f64(key, value)?,
            "train.grad_clip" => self.train.grad_clip = as_f64(key, value)?,
            "train.target_top1" => self.train.target_top1 = as_f64(key, value)?,
            "train.seed" => {
                self.train.seed = value.as_u64().ok_or_else(|| {
                    Error::Invalid(format!(
                        "{key}: expected a non-negative integer, got {value}"
                    ))
                })?
            }
            "train.threads" => self.train.threads = as_usize(key, value)?,
            other => return Err(Error::Invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parse a flat JSON object of dotted keys over the defaults.
    pub fn from_json_str(text: &str) -> Result<RunConfig, Error> {
        let doc: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("config parse: {e}")))?;
        let obj = doc
            .as_object()
            .ok_or_else(|| Error::Format("config must be a JSON object".into()))?;
        let mut cfg = RunConfig::default();
        for (k, v) in obj {
            cfg.apply(k, v)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_json_str(&text)
    }

    /// Full flat-key echo of the effective configuration, sorted by key.
    pub fn to_flat_json(&self) -> BTreeMap<String, serde_json::Value> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: serde_json::Value| {
            m.insert(k.to_string(), v);
        };
        put("gcn.feature_width", self.gcn_feature_width.into());
        put("gcn.layers_per_block", self.gcn_layers_per_block.into());
        put("gcn.blocks", self.gcn_blocks.into());
        put("bert.positional_width", self.bert_positional_width.into());
        put(
            "bert.positional_mode",
            self.bert_positional_mode.name().into(),
        );
        put("bert.layer_count", self.bert_layer_count.into());
        put("bert.head_count", self.bert_head_count.into());
        put("bert.head_width", self.bert_head_width.into());
        put("bert.ffn_width", self.bert_ffn_width.into());
        put("bert.attention_scale", self.bert_attention_scale.into());
        put(
            "bert.standard_residuals",
            self.bert_standard_residuals.into(),
        );
        put("data.window", self.data_window.into());
        put("model.class_count", self.model_class_count.into());
        put("train.batch_size", self.train.batch_size.into());
        put("train.epochs", self.train.epochs.into());
        put("train.learning_rate", self.train.learning_rate.into());
        put("train.weight_decay", self.train.weight_decay.into());
        put("train.grad_clip", self.train.grad_clip.into());
        put("train.target_top1", self.train.target_top1.into());
        put("train.seed", self.train.seed.into());
        put("train.threads", self.train.threads.into());
        m
    }

    /// Rebuild from a flat echo (checkpoint headers, report footers).
    pub fn from_flat_json(map: &BTreeMap<String, serde_json::Value>) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::default();
        for (k, v) in map {
            cfg.apply(k, v)?;
        }
        Ok(cfg)
    }

    /// Architecture view with the class count resolved (from config or the
    /// manifest).
    pub fn model_config(&self, manifest_classes: usize) -> Result<ModelConfig, Error> {
        let class_count = if self.model_class_count > 0 {
            if manifest_classes > 0 && manifest_classes != self.model_class_count {
                return Err(Error::Invalid(format!(
                    "config class_count {} does not match manifest class count {}",
                    self.model_class_count, manifest_classes
                )));
            }
            self.model_class_count
        } else {
            manifest_classes
        };
        let mc = ModelConfig {
            keypoints: MODEL_KEYPOINTS,
            window: self.data_window,
            class_count,
            feature_width: self.gcn_feature_width,
            gcn_layers: self.gcn_layers_per_block,
            gcn_blocks: self.gcn_blocks,
            positional_width: self.bert_positional_width,
            positional_mode: self.bert_positional_mode,
            bert_layers: self.bert_layer_count,
            bert_heads: self.bert_head_count,
            head_width: self.bert_head_width,
            ffn_width: self.bert_ffn_width,
            attention_scale: self.bert_attention_scale,
            standard_bert_residuals: self.bert_standard_residuals,
        };
        mc.validate()?;
        Ok(mc)
    }
}
