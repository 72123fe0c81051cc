//! Experiment configuration files (TOML). Unknown keys are errors.
//!
//! ```toml
//! num_classes = 4
//!
//! [backbone]
//! preset = "toy"
//!
//! [hr]
//! order = 3
//! rank = 8
//! out_per_degree = 8
//!
//! [paired_aspp]
//! combination = 1
//! branch_width = 16
//! proj_width = 32
//!
//! [train]
//! base_lr = 0.01
//! batch_size = 8
//! crop = [64, 64]
//! max_iter = 2000
//! seed = 0
//!
//! [infer]
//! scales = [1.0]
//! flip = false
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::infer::InferConfig;
use crate::model::{HrSettings, ModelConfig};
use crate::paired_aspp::PairedAsppConfig;
use crate::train::TrainConfig;

/// A preset with optional per-field overrides.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks_per_stage: Option<[usize; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stem_width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<[usize; 4]>,
}

impl BackboneSection {
    pub fn resolve(&self) -> Result<BackboneConfig> {
        let mut cfg = BackboneConfig::preset(self.preset.as_deref().unwrap_or("toy"))
            .map_err(|_| Error::config("backbone.preset", "expected \"toy\" or \"paper\""))?;
        if let Some(b) = self.blocks_per_stage {
            cfg.blocks_per_stage = b;
        }
        if let Some(s) = self.stem_width {
            cfg.stem_width = s;
        }
        if let Some(w) = self.widths {
            cfg.widths = w;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub num_classes: usize,
    #[serde(default)]
    pub backbone: BackboneSection,
    pub hr: HrSettings,
    pub paired_aspp: PairedAsppConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub infer: InferConfig,
}

impl ExperimentConfig {
    pub fn model(&self) -> Result<ModelConfig> {
        let m = ModelConfig {
            num_classes: self.num_classes,
            backbone: self.backbone.resolve()?,
            hr: self.hr.clone(),
            paired_aspp: self.paired_aspp.clone(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.model()?;
        self.train.validate()?;
        self.infer.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = parse_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Deserializes TOML, turning errors into [`Error::Config`] that name the
/// offending dotted key.
pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let field = e
            .span()
            .map(|span| key_at(text, span.start))
            .or_else(|| quoted_name(e.message()))
            .unwrap_or_else(|| "<config>".to_string());
        Error::config(field, e.message().trim().to_string())
    })
}

/// Dotted key of the line containing byte `pos`: `[section]` plus the text
/// before `=`.
fn key_at(text: &str, pos: usize) -> String {
    let pos = pos.min(text.len());
    let mut section = String::new();
    let mut key = None;
    let mut start = 0;
    for line in text.split_inclusive('\n') {
        let end = start + line.len();
        let t = line.trim();
        if t.starts_with('[') && !t.starts_with("[[") {
            if start <= pos && pos < end {
                return t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            }
            section = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        } else if start <= pos && pos < end {
            key = t.split('=').next().map(|k| k.trim().to_string());
            break;
        }
        start = end;
    }
    match key {
        Some(k) if !k.is_empty() && !section.is_empty() => format!("{section}.{k}"),
        Some(k) if !k.is_empty() => k,
        _ => section,
    }
}

fn quoted_name(msg: &str) -> Option<String> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(msg[start..start + len].to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paired_aspp::Combination;

    const BASE: &str = r#"
num_classes = 4

[hr]
order = 3
rank = 4
out_per_degree = 4

[paired_aspp]
combination = 2
branch_width = 8
proj_width = 8

[train]
base_lr = 0.01
batch_size = 2
crop = [32, 32]
max_iter = 100
seed = 3
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!(cfg.paired_aspp.combination, Combination::Two);
        assert_eq!(cfg.paired_aspp.rates, [18, 12, 6, 1]);
        assert_eq!(cfg.train.momentum, 0.9);
        assert_eq!(cfg.train.warmup(), 5);
        assert_eq!(cfg.model().unwrap().backbone, BackboneConfig::toy());
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_names_field() {
        let text = BASE.replace("seed = 3", "seed = 3\nsede = 4");
        match ExperimentConfig::from_toml(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "train.sede"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_combination_names_field() {
        let text = BASE.replace("combination = 2", "combination = 3");
        match ExperimentConfig::from_toml(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "paired_aspp.combination"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn semantic_validation_names_field() {
        let text = BASE.replace("crop = [32, 32]", "crop = [30, 32]");
        match ExperimentConfig::from_toml(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "train.crop"),
            other => panic!("{other:?}"),
        }
    }
}
