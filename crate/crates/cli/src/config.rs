//! JSON experiment configuration: a training section plus evaluation
//! settings (pair sampling and FAR targets).

use cmgn_core::{Error, Result, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Row label in comparison tables; defaults to the variant name.
    #[serde(default)]
    pub label: Option<String>,
    pub train: TrainConfig,
    #[serde(default)]
    pub evaluation: EvalSettings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub pairs_per_polarity: usize,
    pub pairs_seed: u64,
    pub far_targets: Vec<f64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            pairs_per_polarity: 500,
            pairs_seed: 0,
            far_targets: vec![0.01],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("config {}: {e}", path.display())))?;
        config.train.validate()?;
        Ok(config)
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(self.train.variant.kind.name())
    }

    /// How this run resolves the curriculum parameter, for table rows:
    /// a frozen value or "adaptive".
    pub fn t_mode(&self) -> String {
        match self.train.variant.fixed_t {
            Some(t) => format!("{t}"),
            None if self.train.variant.mines_hard_samples() => "adaptive".into(),
            None => "n/a".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cmgn_core::VariantKind;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, text).unwrap();
        path
    }

    const MINIMAL: &str = r#"{
        "train": {
            "learning_rate": 0.05,
            "epochs": 3,
            "batch_size": 16,
            "seed": 7,
            "variant": {"kind": "curricular_face", "margin_m": 0.5, "scale_s": 64.0, "fixed_t": null}
        }
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::load(&write(&dir, "c.json", MINIMAL)).unwrap();
        assert_eq!(cfg.train.variant.kind, VariantKind::CurricularFace);
        assert_eq!(cfg.train.hidden_dims, vec![32]);
        assert_eq!(cfg.train.embed_dim, 16);
        assert_eq!(cfg.train.curriculum_momentum, 0.99);
        assert_eq!(cfg.evaluation.pairs_per_polarity, 500);
        assert_eq!(cfg.label(), "curricular_face");
        assert_eq!(cfg.t_mode(), "adaptive");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bad = MINIMAL.replacen("\"train\"", "\"typo_field\": 1, \"train\"", 1);
        assert!(ExperimentConfig::load(&write(&dir, "bad.json", &bad)).is_err());
        let bad_inner = MINIMAL.replacen("\"learning_rate\"", "\"learning_rte\"", 1);
        assert!(ExperimentConfig::load(&write(&dir, "bad2.json", &bad_inner)).is_err());
    }

    #[test]
    fn invalid_values_are_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let bad = MINIMAL.replacen("0.05", "-0.05", 1);
        assert!(ExperimentConfig::load(&write(&dir, "bad.json", &bad)).is_err());
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = ExperimentConfig::load(Path::new("/nonexistent/c.json")).unwrap_err();
        assert_eq!(err.category(), cmgn_core::ErrorCategory::Io);
    }

    #[test]
    fn t_mode_reports_frozen_values() {
        let dir = tempfile::tempdir().unwrap();
        let frozen = MINIMAL.replacen("\"fixed_t\": null", "\"fixed_t\": 0.3", 1);
        let cfg = ExperimentConfig::load(&write(&dir, "f.json", &frozen)).unwrap();
        assert_eq!(cfg.t_mode(), "0.3");
    }
}
