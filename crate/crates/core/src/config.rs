//! Run configuration files and architecture presets.
//!
//! Configs are flat TOML documents (or the same keys as a JSON object /
//! host mapping). Every key is optional and falls back to the defaults
//! below; unknown keys are rejected.
//!
//! | key                        | type                       | default          |
//! |----------------------------|----------------------------|------------------|
//! | `alpha`                    | float in (0, 1]            | 0.9              |
//! | `tau_seg`                  | float in [-1, 1]           | 0.8              |
//! | `tau_merge`                | float in [-1, 1]           | 0.8              |
//! | `retain_ratio`             | float in (0, 1]            | 0.25             |
//! | `initial_frames`           | integer >= 1               | input frames     |
//! | `merge_passes`             | array of layers or tables  | `[6, 14, 20]`    |
//! | `weight_floor`             | float > 0                  | 1e-6             |
//! | `text_tokens`              | integer                    | 64               |
//! | `encoder_preset`           | preset name or `.toml`     | `siglip-so400m`  |
//! | `llm_preset`               | preset name or `.toml`     | `qwen2-7b`       |
//! | `encoder_attention`        | `joint` or `per_frame`     | `joint`          |
//! | `encoder_tokens_per_frame` | integer                    | input tokens     |
//! | `llm_tokens_per_frame`     | integer                    | input tokens     |
//!
//! A merge pass is either a bare layer index or an inline table
//! `{ layer = 6, tau_seg = 0.7, tau_merge = 0.9 }`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flops::{AttentionScope, FlopsSetup, TransformerShape};
use crate::types::{CompressionConfig, MergePassSpec, DEFAULT_WEIGHT_FLOOR};

pub const DEFAULT_TEXT_TOKENS: usize = 64;
pub const DEFAULT_ENCODER_PRESET: &str = "siglip-so400m";
pub const DEFAULT_LLM_PRESET: &str = "qwen2-7b";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum PassEntry {
    Layer(usize),
    Spec(MergePassSpec),
}

/// The flat key-value form shared by config files and host mappings.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau_seg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau_merge: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    retain_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    initial_frames: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    merge_passes: Option<Vec<PassEntry>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weight_floor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    text_tokens: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    encoder_preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    llm_preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    encoder_attention: Option<AttentionScope>,
    #[serde(skip_serializing_if = "Option::is_none")]
    encoder_tokens_per_frame: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    llm_tokens_per_frame: Option<usize>,
}

/// Everything a `compress` run needs besides its input arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub compression: CompressionConfig,
    pub text_tokens: usize,
    pub encoder_preset: String,
    pub llm_preset: String,
    pub encoder_attention: AttentionScope,
    pub encoder_tokens_per_frame: Option<usize>,
    pub llm_tokens_per_frame: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            compression: CompressionConfig::default(),
            text_tokens: DEFAULT_TEXT_TOKENS,
            encoder_preset: DEFAULT_ENCODER_PRESET.into(),
            llm_preset: DEFAULT_LLM_PRESET.into(),
            encoder_attention: AttentionScope::Joint,
            encoder_tokens_per_frame: None,
            llm_tokens_per_frame: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_owned()))?;
        Self::from_raw(raw)
    }

    /// Parses the same keys from a JSON object.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Self::from_raw(raw)
    }

    /// The flat key-value form: every key set, merge passes as tables.
    pub fn to_json_string(&self) -> String {
        let c = &self.compression;
        let raw = RawConfig {
            alpha: Some(c.alpha),
            tau_seg: Some(c.tau_seg),
            tau_merge: Some(c.tau_merge),
            retain_ratio: Some(c.retain_ratio),
            initial_frames: c.initial_frames,
            merge_passes: Some(c.merge_passes.iter().copied().map(PassEntry::Spec).collect()),
            weight_floor: Some(c.weight_floor),
            text_tokens: Some(self.text_tokens),
            encoder_preset: Some(self.encoder_preset.clone()),
            llm_preset: Some(self.llm_preset.clone()),
            encoder_attention: Some(self.encoder_attention),
            encoder_tokens_per_frame: self.encoder_tokens_per_frame,
            llm_tokens_per_frame: self.llm_tokens_per_frame,
        };
        serde_json::to_string(&raw).expect("config serializes")
    }

    fn from_raw(raw: RawConfig) -> Result<Self> {
        let defaults = CompressionConfig::default();
        let compression = CompressionConfig {
            alpha: raw.alpha.unwrap_or(defaults.alpha),
            tau_seg: raw.tau_seg.unwrap_or(defaults.tau_seg),
            tau_merge: raw.tau_merge.unwrap_or(defaults.tau_merge),
            retain_ratio: raw.retain_ratio.unwrap_or(defaults.retain_ratio),
            initial_frames: raw.initial_frames,
            merge_passes: match raw.merge_passes {
                Some(entries) => entries
                    .into_iter()
                    .map(|e| match e {
                        PassEntry::Layer(layer) => MergePassSpec::at_layer(layer),
                        PassEntry::Spec(spec) => spec,
                    })
                    .collect(),
                None => defaults.merge_passes,
            },
            weight_floor: raw.weight_floor.unwrap_or(DEFAULT_WEIGHT_FLOOR),
        };
        let config = Self {
            compression,
            text_tokens: raw.text_tokens.unwrap_or(DEFAULT_TEXT_TOKENS),
            encoder_preset: raw.encoder_preset.unwrap_or_else(|| DEFAULT_ENCODER_PRESET.into()),
            llm_preset: raw.llm_preset.unwrap_or_else(|| DEFAULT_LLM_PRESET.into()),
            encoder_attention: raw.encoder_attention.unwrap_or_default(),
            encoder_tokens_per_frame: raw.encoder_tokens_per_frame,
            llm_tokens_per_frame: raw.llm_tokens_per_frame,
        };
        config.compression.validate()?;
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    /// Resolves both presets into a FLOPs setup.
    pub fn flops_setup(&self) -> Result<FlopsSetup> {
        let encoder = ShapePreset::resolve(&self.encoder_preset)?;
        let llm = ShapePreset::resolve(&self.llm_preset)?;
        Ok(FlopsSetup {
            encoder: encoder.shape(),
            llm: llm.shape(),
            encoder_tokens_per_frame: self.encoder_tokens_per_frame,
            llm_tokens_per_frame: self.llm_tokens_per_frame,
            text_tokens: self.text_tokens,
            encoder_attention: self.encoder_attention,
        })
    }
}

/// Public architecture constants of a transformer stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapePreset {
    pub name: String,
    pub layers: usize,
    pub hidden: usize,
    pub ffn: usize,
    /// Encoder presets: tokens per frame.
    pub tokens_per_frame: Option<usize>,
    /// Encoder presets: tokens per frame after the projector.
    pub llm_tokens_per_frame: Option<usize>,
}

const BUILTIN_PRESETS: &[(&str, &str)] = &[
    ("siglip-so400m", include_str!("../presets/siglip-so400m.toml")),
    ("qwen2-7b", include_str!("../presets/qwen2-7b.toml")),
    ("qwen2-0.5b", include_str!("../presets/qwen2-0.5b.toml")),
];

impl ShapePreset {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_owned()))
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN_PRESETS.iter().map(|(n, _)| *n)
    }

    /// Looks up a built-in preset by name, or loads a `.toml` preset file.
    pub fn resolve(name: &str) -> Result<Self> {
        if let Some((_, text)) = BUILTIN_PRESETS.iter().find(|(n, _)| *n == name) {
            return Self::from_toml_str(text);
        }
        if name.ends_with(".toml") {
            return Self::from_toml_str(&fs::read_to_string(name)?);
        }
        Err(Error::UnknownPreset(name.to_owned()))
    }

    pub fn shape(&self) -> TransformerShape {
        TransformerShape::new(self.layers, self.hidden, self.ffn)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn parses_mixed_pass_list() {
        let c = RunConfig::from_toml_str(
            "alpha = 0.9\ntau_seg = 0.65\nretain_ratio = 0.1\n\
             merge_passes = [8, { layer = 14, tau_merge = 0.95 }, 20]\n",
        )
        .unwrap();
        let passes = &c.compression.merge_passes;
        assert_eq!(passes.len(), 3);
        assert_eq!(passes[0], MergePassSpec::at_layer(8));
        assert_eq!(passes[1].tau_merge, Some(0.95));
        assert_eq!(c.compression.tau_seg, 0.65);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let err = RunConfig::from_toml_str("tau_segment = 0.8\n").unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(ref m) if m.contains("tau_segment")));
        let err = RunConfig::from_toml_str("merge_passes = [{ layr = 3 }]\n").unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn out_of_range_values_are_errors() {
        assert!(RunConfig::from_toml_str("retain_ratio = 1.5\n").is_err());
        assert!(RunConfig::from_toml_str("merge_passes = []\n").is_err());
        assert!(RunConfig::from_toml_str("alpha = \"high\"\n").is_err());
    }

    #[test]
    fn json_form_round_trips() {
        let c = RunConfig::from_toml_str(
            "retain_ratio = 0.15\nmerge_passes = [4, { layer = 9, tau_seg = 0.7 }]\n\
             encoder_attention = \"per_frame\"\nllm_tokens_per_frame = 196\n",
        )
        .unwrap();
        let text = c.to_json_string();
        assert_eq!(RunConfig::from_json_str(&text).unwrap(), c);
        assert!(RunConfig::from_json_str(r#"{"retain": 0.2}"#).is_err());
        assert_eq!(RunConfig::from_json_str("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn builtin_presets_resolve() {
        for name in ShapePreset::builtin_names() {
            let p = ShapePreset::resolve(name).unwrap();
            assert_eq!(p.name, name);
        }
        let enc = ShapePreset::resolve("siglip-so400m").unwrap();
        assert_eq!((enc.layers, enc.hidden, enc.ffn), (27, 1152, 4304));
        assert_eq!(enc.tokens_per_frame, Some(729));
        assert!(matches!(
            ShapePreset::resolve("gpt-17"),
            Err(Error::UnknownPreset(_))
        ));
    }
}
