//! Run configuration file: `[model]`, `[training]` and `[data]` TOML
//! sections, each defaulting to the full-size recipe, plus dotted-path
//! overrides such as `training.total_steps=0`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Preprocessor;
use crate::model::{ConfigError, VstConfig};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Training manifest, relative to the config file's directory.
    pub manifest: PathBuf,
    /// Square side every input is resized to before cropping to the model input.
    pub resize: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            manifest: PathBuf::from("train.tsv"),
            resize: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: VstConfig,
    pub training: TrainConfig,
    pub data: DataConfig,
}

/// Parses a TOML scalar/array, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `root[a][b]… = value` for an override `a.b…=value`.
pub fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::new(format!("override {spec:?} is not KEY=VALUE")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::new(format!("bad override key {key:?}")));
    }
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::new(format!("override {key:?}: {p} is not a table")))?;
    }
    table.insert(last.to_string(), parse_value(raw));
    Ok(())
}

impl RunConfig {
    /// Parses config text, applies overrides in order, and validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::new(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| ConfigError::new(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; a relative manifest path is resolved against the
    /// config file's directory and made absolute.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, overrides)?;
        if cfg.data.manifest.is_relative() {
            let dir = path.parent().unwrap_or(Path::new(""));
            let joined = dir.join(&cfg.data.manifest);
            cfg.data.manifest = std::path::absolute(&joined).unwrap_or(joined);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        self.training.validate()?;
        self.preprocessor()?;
        Ok(())
    }

    pub fn preprocessor(&self) -> Result<Preprocessor, ConfigError> {
        let [h, w] = self.model.input_hw;
        Preprocessor::new(self.data.resize, h, w).map_err(|e| ConfigError::new(format!("data: {e}")))
    }

    /// The effective configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_full_size_recipe() {
        let cfg = RunConfig::parse("", &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.training.total_steps, 40_000);
        assert_eq!(cfg.data.resize, 256);
    }

    #[test]
    fn overrides_take_precedence() {
        let text = "[training]\ntotal_steps = 10\n[model]\nd = 48\n";
        let cfg = RunConfig::parse(
            text,
            &[
                "training.total_steps=0".into(),
                "model.modality=rgbd".into(),
                "training.milestones=[0.25, 0.5]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.training.total_steps, 0);
        assert_eq!(cfg.model.d, 48);
        assert_eq!(cfg.model.modality, crate::model::Modality::Rgbd);
        assert_eq!(cfg.training.milestones, vec![0.25, 0.5]);
    }

    #[test]
    fn echo_roundtrips() {
        let cfg = RunConfig::parse("", &["model.n_heads=2".into(), "data.resize=300".into()]).unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml(), &[]).unwrap(), cfg);
    }

    #[test]
    fn rejects_invalid() {
        assert!(RunConfig::parse("[model]\nbogus = 1", &[]).is_err());
        assert!(RunConfig::parse("", &["data.resize=100".into()]).is_err());
        assert!(RunConfig::parse("", &["training.milestones=[0.75, 0.5]".into()]).is_err());
        assert!(RunConfig::parse("", &["novalue".into()]).is_err());
        assert!(RunConfig::parse("", &["model.input_hw=[100, 100]".into()]).is_err());
    }
}
