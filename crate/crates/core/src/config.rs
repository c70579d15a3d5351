//! Pipeline configuration file (TOML or JSON).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::preprocess::PreprocessConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
}

impl PipelineConfig {
    /// Every problem across all sections, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        self.preprocess.validate(&mut problems);
        self.encoder.validate(&mut problems);
        self.train.validate(&mut problems);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        c.validate()?;
        Ok(c)
    }

    /// Format chosen by extension: `.json` is JSON, anything else TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        };
        parsed.map_err(|e| match e {
            Error::Config(p) => Error::Config(p.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_uses_defaults() {
        let c = PipelineConfig::from_toml("[train]\nepochs = 3\nseed = 9\n").unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.encoder, EncoderConfig::default());
        let j = PipelineConfig::from_json(r#"{"train": {"epochs": 3, "seed": 9}}"#).unwrap();
        assert_eq!(c, j);
    }

    #[test]
    fn all_problems_listed_at_once() {
        let text = "[preprocess]\nhop_length = 0\n[encoder]\nlev_dim = 0\n[train]\ntau_s = 5.0\ntau_d = 1.0\nensemble_size = 0\n";
        match PipelineConfig::from_toml(text) {
            Err(Error::Config(p)) => assert!(p.len() >= 4, "{p:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected_and_round_trip() {
        assert!(PipelineConfig::from_toml("[train]\nepoch = 3\n").is_err());
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
