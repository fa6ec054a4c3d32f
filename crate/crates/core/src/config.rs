//! Flat `key = value` experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mcts::SearchConfig;
use crate::training::LossConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(String),
    #[error("override `{key}`: {reason}")]
    Override { key: String, reason: String },
    #[error("`{key}` {reason}")]
    Invalid { key: &'static str, reason: &'static str },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Experiment settings. Files are flat TOML (`key = value` lines, `#`
/// comments); absent keys keep their defaults and unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub c_puct: f64,
    pub c_pw: f64,
    pub kappa: f64,
    pub tau: f64,
    pub lambda: f64,
    pub c_e: f64,
    pub n_trace: usize,
    pub gamma: f64,
    pub c_b: f64,
    pub horizon: u32,
    pub lr: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub batch: usize,
    pub buffer_capacity: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub repetitions: usize,
    /// Accounted environment steps per repetition; 0 disables the cap.
    pub budget_steps: u64,
    /// Wall-clock seconds per repetition; 0 disables the cap.
    pub budget_seconds: f64,
    pub seed: u64,
    /// Write measured seconds to the `wall_s` column instead of 0.
    pub log_wall_time: bool,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            c_puct: 0.05,
            c_pw: 1.0,
            kappa: 0.5,
            tau: 0.1,
            lambda: 0.1,
            c_e: 20.0,
            n_trace: 10,
            gamma: 1.0,
            c_b: 2.0,
            horizon: 300,
            lr: 1e-4,
            rmsprop_decay: 0.9,
            rmsprop_eps: 1e-8,
            batch: 32,
            buffer_capacity: 25_000,
            hidden_layers: 3,
            hidden_units: 128,
            repetitions: 10,
            budget_steps: 150_000,
            budget_seconds: 0.0,
            seed: 0,
            log_wall_time: false,
        }
    }
}

impl Config {
    /// Parses config text, applies `overrides` (key, value text) in order,
    /// then validates.
    pub fn parse_str(text: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for (key, value) in overrides {
            let bad = |reason: String| ConfigError::Override {
                key: key.clone(),
                reason,
            };
            let line: toml::Table = format!("{} = {}", key.trim(), value.trim())
                .parse()
                .map_err(|e: toml::de::Error| bad(e.message().to_string()))?;
            for (k, v) in line {
                table.insert(k, v);
            }
        }
        let cfg: Config = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or uses defaults when `None`) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.display().to_string(),
                source,
            })?,
            None => String::new(),
        };
        Self::parse_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive: [(&'static str, f64); 7] = [
            ("c_puct", self.c_puct),
            ("c_pw", self.c_pw),
            ("tau", self.tau),
            ("lambda", self.lambda),
            ("c_e", self.c_e),
            ("c_b", self.c_b),
            ("lr", self.lr),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid {
                    key,
                    reason: "must be positive and finite",
                });
            }
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(ConfigError::Invalid {
                key: "kappa",
                reason: "must lie in (0, 1)",
            });
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(ConfigError::Invalid {
                key: "gamma",
                reason: "must lie in [0, 1]",
            });
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) {
            return Err(ConfigError::Invalid {
                key: "rmsprop_decay",
                reason: "must lie in [0, 1)",
            });
        }
        if self.rmsprop_eps.is_nan() || self.rmsprop_eps <= 0.0 {
            return Err(ConfigError::Invalid {
                key: "rmsprop_eps",
                reason: "must be positive",
            });
        }
        let counts: [(&'static str, u64); 7] = [
            ("n_trace", self.n_trace as u64),
            ("horizon", self.horizon as u64),
            ("batch", self.batch as u64),
            ("buffer_capacity", self.buffer_capacity as u64),
            ("hidden_layers", self.hidden_layers as u64),
            ("hidden_units", self.hidden_units as u64),
            ("repetitions", self.repetitions as u64),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(ConfigError::Invalid {
                    key,
                    reason: "must be at least 1",
                });
            }
        }
        if !(self.budget_seconds >= 0.0 && self.budget_seconds.is_finite()) {
            return Err(ConfigError::Invalid {
                key: "budget_seconds",
                reason: "must be non-negative and finite",
            });
        }
        if self.budget_steps == 0 && self.budget_seconds == 0.0 {
            return Err(ConfigError::Invalid {
                key: "budget_steps",
                reason: "and budget_seconds cannot both be 0",
            });
        }
        Ok(())
    }

    pub fn search(&self) -> SearchConfig {
        SearchConfig {
            c_puct: self.c_puct,
            c_pw: self.c_pw,
            kappa: self.kappa,
            gamma: self.gamma,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            tau: self.tau,
            lambda: self.lambda,
            c_b: self.c_b,
        }
    }

    pub fn hidden(&self) -> Vec<usize> {
        vec![self.hidden_units; self.hidden_layers]
    }

    /// Renders every key; `parse_str` of the output reproduces `self`.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat struct of scalars serializes")
    }
}
