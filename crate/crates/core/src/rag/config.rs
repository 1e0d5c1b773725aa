use super::template::TemplateName;
use crate::memory::{DEFAULT_UPDATE_EVERY, DEFAULT_WINDOW};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const DEFAULT_ALPHA: f64 = 0.2;
pub const DEFAULT_K: usize = 1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid config field {field}: {message}")]
    Validation { field: &'static str, message: String },
    #[error("cannot read config: {0}")]
    Io(String),
    #[error("cannot parse config: {0}")]
    Parse(String),
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_window() -> usize {
    DEFAULT_WINDOW
}
fn default_update_every() -> u64 {
    DEFAULT_UPDATE_EVERY
}
fn default_k() -> usize {
    DEFAULT_K
}
fn yes() -> bool {
    true
}

/// Per-session knobs. Missing JSON fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_window")]
    pub short_term_n: usize,
    #[serde(default = "default_update_every")]
    pub update_every: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub template: TemplateName,
    #[serde(default)]
    pub seed: u64,
    /// Include the short-term window in prompts.
    #[serde(default = "yes")]
    pub short_term: bool,
    /// Track entities and inject their summaries.
    #[serde(default = "yes")]
    pub long_term: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            short_term_n: DEFAULT_WINDOW,
            update_every: DEFAULT_UPDATE_EVERY,
            k: DEFAULT_K,
            template: TemplateName::Default,
            seed: 0,
            short_term: true,
            long_term: true,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(-1.0..=1.0).contains(&self.alpha) {
            return Err(ConfigError::Validation {
                field: "alpha",
                message: format!("{} is outside [-1, 1]", self.alpha),
            });
        }
        for (field, v) in [
            ("short_term_n", self.short_term_n as u64),
            ("update_every", self.update_every),
            ("k", self.k as u64),
        ] {
            if v < 1 {
                return Err(ConfigError::Validation { field, message: "must be at least 1".into() });
            }
        }
        Ok(())
    }

    pub fn from_json(raw: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(raw).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(e.to_string()))?;
        Self::from_json(&raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = SessionConfig::default();
        assert_eq!((c.alpha, c.short_term_n, c.update_every, c.k), (0.2, 10, 10, 1));
        assert_eq!(SessionConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn range_checks() {
        let c = SessionConfig { alpha: 2.0, ..Default::default() };
        assert!(matches!(c.validate(), Err(ConfigError::Validation { field: "alpha", .. })));
        let c = SessionConfig { k: 0, ..Default::default() };
        assert!(c.validate().is_err());
        assert!(SessionConfig::from_json(r#"{"short_term_n": 0}"#).is_err());
        assert!(SessionConfig::from_json(r#"{"bogus": 1}"#).is_err());
        let c = SessionConfig::from_json(r#"{"template": "gkp", "alpha": 0.3}"#).unwrap();
        assert_eq!(c.template, TemplateName::Gkp);
    }
}
