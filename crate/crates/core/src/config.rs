//! Run configuration: one TOML document covering training, environment,
//! network, loss and optimizer settings. Every field has a default, unknown
//! keys are rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::acnet::{ConvShape, LossConfig, NetShape, OptConfig};
use crate::ga3c::TrainConfig;
use crate::sim_env::EnvSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("override `{0}` is not of the form key=value")]
    Override(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub conv1: ConvShape,
    pub conv2: ConvShape,
    pub dense: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let s = NetShape::default();
        Self {
            conv1: s.conv1,
            conv2: s.conv2,
            dense: s.dense,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub train: TrainConfig,
    pub env: EnvSpec,
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub optimizer: OptConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs/default"),
            train: TrainConfig::default(),
            env: EnvSpec::default(),
            network: NetworkConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptConfig::default(),
        }
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string (`map=lab` instead of `map="lab"`).
fn parse_value(text: &str) -> toml::Value {
    let doc = format!("v = {text}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(text.to_string())),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    let path: Vec<&str> = key.trim().split('.').map(str::trim).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(assignment.to_string()));
    }
    let (last, parents) = path.split_last().expect("split yields at least one part");
    let mut table = root;
    for part in parents {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Parse(format!("`{key}`: `{part}` is not a table")))?;
    }
    table.insert(last.to_string(), parse_value(value.trim()));
    Ok(())
}

impl RunConfig {
    /// Parses a TOML document, then applies `key.path=value` overrides.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(ConfigError::Invalid)?;
        self.env.validate().map_err(ConfigError::Invalid)?;
        self.net_shape().validate().map_err(ConfigError::Invalid)?;
        if self.env.actions.len() != NetShape::default().actions {
            return Err(ConfigError::Invalid("the network expects seven actions".into()));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.decay > 0.0 && o.decay < 1.0 && o.epsilon > 0.0) {
            return Err(ConfigError::Invalid(
                "optimizer needs learning_rate > 0, 0 < decay < 1 and epsilon > 0".into(),
            ));
        }
        if !(self.loss.beta >= 0.0 && self.loss.value_coef >= 0.0) {
            return Err(ConfigError::Invalid("loss weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn net_shape(&self) -> NetShape {
        NetShape {
            scan_len: self.env.scanner.num_beams,
            history: self.env.history_len,
            conv1: self.network.conv1,
            conv2: self.network.conv2,
            dense: self.network.dense,
            bearing_bins: self.env.bearing_bins,
            actions: self.env.actions.len(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of everything that shapes training, taken over the canonical TOML
    /// form. The output directory and the episode target are left out so a
    /// run can be moved or extended without tripping the mismatch warning.
    pub fn hash(&self) -> u64 {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        canonical.train.total_episodes = 0;
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::from_toml("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.net_shape(), NetShape::default());
    }

    #[test]
    fn serialized_defaults_parse_back() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml(), &[]).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_toml("[train]\nnum_agentz = 3\n", &[]).unwrap_err();
        assert!(err.to_string().contains("num_agentz"), "{err}");
        let err = RunConfig::from_toml("", &["env.robot.wheels=3".into()]).unwrap_err();
        assert!(err.to_string().contains("wheels"), "{err}");
    }

    #[test]
    fn overrides_take_precedence() {
        let text = "output_dir = \"a\"\n[train]\nnum_agents = 4\n";
        let c = RunConfig::from_toml(
            text,
            &[
                "train.num_agents=2".into(),
                "output_dir=runs/b".into(),
                "optimizer.learning_rate = 1e-3".into(),
                "train.maps=[{name=\"lab\"}]".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.train.num_agents, 2);
        assert_eq!(c.output_dir, PathBuf::from("runs/b"));
        assert_eq!(c.optimizer.learning_rate, 1e-3);
        assert_eq!(c.train.maps[0].name, "lab");
        assert_eq!(c.train.maps[0].weight, 1.0);
        assert!(matches!(
            RunConfig::from_toml("", &["novalue".into()]),
            Err(ConfigError::Override(_))
        ));
    }

    #[test]
    fn invalid_values_are_rejected() {
        let err = RunConfig::from_toml("[train]\ngamma = 1.5\n", &[]).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
        assert!(RunConfig::from_toml("[train]\nnum_agents = -1\n", &[]).is_err());
    }

    #[test]
    fn hash_tracks_training_settings_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        b.train.total_episodes = 99;
        assert_eq!(a.hash(), b.hash());
        b.train.gamma = 0.95;
        assert_ne!(a.hash(), b.hash());
    }
}
