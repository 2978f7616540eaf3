//! Config files: TOML when the extension is `.toml`, JSON otherwise.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub fn parse_config<T: DeserializeOwned>(text: &str, toml_format: bool) -> Result<T, String> {
    if toml_format {
        toml::from_str(text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }
}

pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    parse_config(&text, is_toml).map_err(|message| ConfigError::Parse { path: path.to_path_buf(), message })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::{TrainConfig, TrainMode};

    #[test]
    fn toml_and_json_agree() {
        let toml_text = "seed = 3\nbatch_size = 32\nmode = \"text_image\"\n[epochs]\nphase1 = 1\n[model]\nd_g = 64\n";
        let json_text = r#"{"seed": 3, "batch_size": 32, "mode": "text_image", "epochs": {"phase1": 1}, "model": {"d_g": 64}}"#;
        let a: TrainConfig = parse_config(toml_text, true).unwrap();
        let b: TrainConfig = parse_config(json_text, false).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mode, TrainMode::TextImage);
        assert_eq!(a.epochs.phase1, 1);
        assert_eq!(a.epochs.phase3, 12);
        assert_eq!(a.model.d_g, 64);
        assert_eq!(a.model.embed_dim, 768);
    }

    #[test]
    fn load_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = \"x\"").unwrap();
        assert!(matches!(load_config::<TrainConfig>(&p), Err(ConfigError::Parse { .. })));
        assert!(matches!(load_config::<TrainConfig>(&dir.path().join("missing.json")), Err(ConfigError::Io { .. })));
    }
}
