//! Config files (JSON or TOML by extension) and the content hash printed by
//! every run.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: unsupported config extension (use .json or .toml)")]
    Format { path: PathBuf },
}

/// Read `path` over the type's defaults. Missing keys keep their default;
/// unknown keys are rejected by the target type.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse = |message: String| ConfigError::Parse {
        path: path.to_path_buf(),
        message,
    };
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(|e| parse(e.to_string())),
        Some("toml") => toml::from_str(&text).map_err(|e| parse(e.to_string())),
        _ => Err(ConfigError::Format {
            path: path.to_path_buf(),
        }),
    }
}

/// Defaults when `path` is `None`.
pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, ConfigError> {
    path.map_or_else(|| Ok(T::default()), load_config)
}

/// Compact JSON of the resolved config.
pub fn canonical_json<T: Serialize>(cfg: &T) -> String {
    serde_json::to_string(cfg).expect("config types serialize to JSON")
}

/// SHA-256 of [`canonical_json`], hex encoded.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    hex::encode(Sha256::digest(canonical_json(cfg).as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossConfig;

    #[test]
    fn json_and_toml_merge_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("c.json");
        std::fs::write(&json, r#"{"tau": 0.1}"#).unwrap();
        let cfg: LossConfig = load_config(&json).unwrap();
        assert_eq!(cfg.tau, 0.1);
        assert_eq!(cfg.gamma, LossConfig::default().gamma);
        let toml_path = dir.path().join("c.toml");
        std::fs::write(&toml_path, "gamma = 0.25\n").unwrap();
        let cfg: LossConfig = load_config(&toml_path).unwrap();
        assert_eq!(cfg.gamma, 0.25);
        assert_eq!(cfg.tau, 0.07);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("c.json");
        std::fs::write(&json, r#"{"tua": 0.1}"#).unwrap();
        assert!(matches!(
            load_config::<LossConfig>(&json),
            Err(ConfigError::Parse { .. })
        ));
        let other = dir.path().join("c.yaml");
        std::fs::write(&other, "").unwrap();
        assert!(matches!(
            load_config::<LossConfig>(&other),
            Err(ConfigError::Format { .. })
        ));
    }

    #[test]
    fn hash_tracks_content() {
        let a = LossConfig::default();
        let b = LossConfig { tau: 0.08, ..a };
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
