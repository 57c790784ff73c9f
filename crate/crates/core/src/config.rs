//! Run configuration: one TOML file covering data location, model,
//! training and synthesis, with `key.path=value` overrides layered on
//! top before deserialization.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::models::ModelConfig;
use crate::pipeline::SplitMode;
use crate::synth::SynthConfig;
use crate::train::TrainConfig;
use crate::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset root in the canonical layout.
    pub data_root: PathBuf,
    /// Where checkpoints, predictions and reports land.
    pub output_dir: PathBuf,
    /// One training run per seed; reports aggregate across them.
    pub seeds: Vec<u64>,
    pub split_mode: SplitMode,
    pub split_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_root: PathBuf::from("data"),
            output_dir: PathBuf::from("runs"),
            seeds: (0..10).collect(),
            split_mode: SplitMode::UnseenObject,
            split_seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CoreError::Config("seeds must be nonempty".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        Ok(())
    }
}

/// Parses the right-hand side of an override as TOML when possible so
/// numbers, booleans and arrays keep their types; anything that does
/// not parse is taken as a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut table) => table.remove("v").expect("key v always present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let mut cursor = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CoreError::Config(format!("bad override path {path:?}")));
    }
    for part in &parts[..parts.len() - 1] {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| CoreError::Config(format!("{path}: {part} is not a table")))?;
        cursor = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cursor
        .as_table_mut()
        .ok_or_else(|| CoreError::Config(format!("{path}: parent is not a table")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Loads a config file (or starts from defaults with no file), applies
/// `key.path=value` overrides, then deserializes and validates.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut value: toml::Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|_| CoreError::MissingFile(p.display().to_string()))?;
            text.parse()
                .map_err(|e| CoreError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Value::Table(toml::Table::new()),
    };
    for entry in overrides {
        let (key, raw) = entry
            .split_once('=')
            .ok_or_else(|| CoreError::Config(format!("override {entry:?} is not key=value")))?;
        set_dotted(&mut value, key.trim(), parse_value(raw.trim()))?;
    }
    let cfg: RunConfig = value
        .try_into()
        .map_err(|e| CoreError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Architecture;

    #[test]
    fn defaults_without_file() {
        let cfg = load_config(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn file_sections_are_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "data_root = \"/tmp/ds\"\n\n[model]\narchitecture = \"res-tf\"\nstrategy = \"image-fw\"\n\n[train]\nepochs = 7\n",
        )
        .unwrap();
        let cfg = load_config(Some(&path), &[]).unwrap();
        assert_eq!(cfg.data_root, PathBuf::from("/tmp/ds"));
        assert_eq!(cfg.model.architecture, Architecture::ResTf);
        assert_eq!(cfg.train.epochs, 7);
        // untouched sections keep their defaults
        assert_eq!(cfg.synth, SynthConfig::default());
    }

    #[test]
    fn overrides_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nepochs = 7\nbatch_size = 4\n").unwrap();
        let cfg = load_config(
            Some(&path),
            &[
                "train.epochs=9".to_string(),
                "model.encoder_channels=[4, 8]".to_string(),
                "data_root=elsewhere".to_string(),
                "seeds=[3, 5]".to_string(),
                "split_mode=seen-object".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 9);
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.model.encoder_channels, vec![4, 8]);
        assert_eq!(cfg.data_root, PathBuf::from("elsewhere"));
        assert_eq!(cfg.seeds, vec![3, 5]);
        assert_eq!(cfg.split_mode, SplitMode::SeenObject);
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        let err = load_config(None, &["seeds=[]".to_string()]).unwrap_err();
        assert!(matches!(err, CoreError::Config(_)));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = load_config(None, &["train.epochz=9".to_string()]).unwrap_err();
        assert!(matches!(err, CoreError::Config(_)), "{err}");
    }

    #[test]
    fn malformed_override_is_rejected() {
        let err = load_config(None, &["no-equals-sign".to_string()]).unwrap_err();
        assert!(matches!(err, CoreError::Config(_)));
    }

    #[test]
    fn invalid_values_fail_validation() {
        let err = load_config(None, &["model.image_size=50".to_string()]).unwrap_err();
        assert!(matches!(err, CoreError::Config(_)));
    }
}
