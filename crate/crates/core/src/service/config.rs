use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::HeuristicConfig;
use crate::challenge::{DifficultyLevel, DEFAULT_TILE_SIZE, DEFAULT_TIME_LIMIT_S, TILE_SIZES};
use crate::rl::LearningParams;

/// Where challenge and nonce randomness comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "SeedRepr", into = "SeedRepr")]
pub enum SeedMode {
    Fixed(u64),
    #[default]
    Entropy,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SeedRepr {
    Fixed(u64),
    Word(String),
}

impl TryFrom<SeedRepr> for SeedMode {
    type Error = String;

    fn try_from(r: SeedRepr) -> Result<Self, Self::Error> {
        match r {
            SeedRepr::Fixed(s) => Ok(SeedMode::Fixed(s)),
            SeedRepr::Word(w) if w == "entropy" => Ok(SeedMode::Entropy),
            SeedRepr::Word(w) => Err(format!("seed must be an integer or \"entropy\", got {w:?}")),
        }
    }
}

impl From<SeedMode> for SeedRepr {
    fn from(m: SeedMode) -> Self {
        match m {
            SeedMode::Fixed(s) => SeedRepr::Fixed(s),
            SeedMode::Entropy => SeedRepr::Word("entropy".into()),
        }
    }
}

/// How tile images and audio reach the client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetMode {
    /// Base64 PGM / WAV embedded in the challenge payload.
    #[default]
    Inline,
    /// Per-asset URLs served by the HTTP layer.
    Url,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    /// With learning off every challenge holds the current level.
    pub enabled: bool,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
}

impl Default for RlConfig {
    fn default() -> Self {
        let p = LearningParams::default();
        Self {
            enabled: true,
            alpha: p.alpha,
            gamma: p.gamma,
            epsilon: p.epsilon,
            epsilon_decay: p.epsilon_decay,
            epsilon_min: p.epsilon_min,
        }
    }
}

impl RlConfig {
    pub fn params(&self) -> LearningParams {
        LearningParams {
            alpha: self.alpha,
            gamma: self.gamma,
            epsilon: self.epsilon,
            epsilon_decay: self.epsilon_decay,
            epsilon_min: self.epsilon_min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub initial_level: DifficultyLevel,
    pub time_limit_s: f64,
    pub max_challenges_per_session: usize,
    pub rl: RlConfig,
    /// SVM model file; the bundled model when absent.
    pub classifier_model: Option<PathBuf>,
    pub journal: Option<PathBuf>,
    /// Q-table snapshot, loaded at startup when the file exists and written
    /// back on shutdown.
    pub qtable: Option<PathBuf>,
    pub seed: SeedMode,
    pub asset_mode: AssetMode,
    pub tile_size: u32,
    /// Pass-token HMAC key. Falls back to `ADAPTCHA_TOKEN_KEY`, then to a
    /// key derived from the seed.
    pub pass_token_key: Option<String>,
    pub heuristics: HeuristicConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            initial_level: DifficultyLevel::new(2).expect("2 is a valid level"),
            time_limit_s: DEFAULT_TIME_LIMIT_S,
            max_challenges_per_session: 5,
            rl: RlConfig::default(),
            classifier_model: None,
            journal: None,
            qtable: None,
            seed: SeedMode::Entropy,
            asset_mode: AssetMode::Inline,
            tile_size: DEFAULT_TILE_SIZE,
            pass_token_key: None,
            heuristics: HeuristicConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

impl ServiceConfig {
    /// Reads a TOML file, or JSON when the extension is `.json`, then validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let parsed: Result<Self, String> = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        let config = parsed.map_err(|message| ConfigError::Parse {
            path: path.to_owned(),
            message,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.listen.parse::<SocketAddr>().map_err(|e| {
            invalid(
                "listen",
                format!("{:?} is not a socket address: {e}", self.listen),
            )
        })?;
        if !(self.time_limit_s.is_finite() && self.time_limit_s > 0.0) {
            return Err(invalid(
                "time_limit_s",
                format!("{} must be positive", self.time_limit_s),
            ));
        }
        if self.max_challenges_per_session == 0 {
            return Err(invalid("max_challenges_per_session", "must be at least 1"));
        }
        if let Err(e) = self.rl.params().validate() {
            return Err(invalid(&format!("rl.{}", e.field), e.to_string()));
        }
        if !TILE_SIZES.contains(&self.tile_size) {
            return Err(invalid(
                "tile_size",
                format!("{} is not one of {TILE_SIZES:?}", self.tile_size),
            ));
        }
        if self.pass_token_key.as_deref() == Some("") {
            return Err(invalid("pass_token_key", "must not be empty"));
        }
        let h = &self.heuristics;
        for (field, v) in [
            ("heuristics.min_movement_px", h.min_movement_px),
            ("heuristics.min_elapsed_s", h.min_elapsed_s),
            ("heuristics.metronomic_max_std_s", h.metronomic_max_std_s),
            ("heuristics.margin", h.margin),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(
                    field,
                    format!("{v} must be finite and non-negative"),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ServiceConfig::default();
        c.validate().unwrap();
        assert_eq!(c.initial_level.get(), 2);
        assert_eq!(c.max_challenges_per_session, 5);
    }

    #[test]
    fn toml_with_overrides() {
        let c: ServiceConfig = toml::from_str(
            r#"
            seed = 7
            initial_level = 1
            asset_mode = "url"
            [rl]
            enabled = false
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, SeedMode::Fixed(7));
        assert_eq!(c.initial_level.get(), 1);
        assert!(!c.rl.enabled);
        assert_eq!(c.rl.alpha, 0.1);
        let e: ServiceConfig = toml::from_str(r#"seed = "entropy""#).unwrap();
        assert_eq!(e.seed, SeedMode::Entropy);
        assert!(toml::from_str::<ServiceConfig>(r#"seed = "lucky""#).is_err());
        assert!(toml::from_str::<ServiceConfig>("initial_level = 9").is_err());
        assert!(toml::from_str::<ServiceConfig>("bogus = 1").is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let field_of = |c: ServiceConfig| match c.validate() {
            Err(ConfigError::Invalid { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        let mut c = ServiceConfig {
            time_limit_s: -1.0,
            ..ServiceConfig::default()
        };
        assert_eq!(field_of(c.clone()), "time_limit_s");
        c.time_limit_s = 30.0;
        c.rl.gamma = 1.5;
        assert_eq!(field_of(c.clone()), "rl.gamma");
        c.rl.gamma = 0.9;
        c.listen = "nowhere".into();
        assert_eq!(field_of(c.clone()), "listen");
        c.listen = "0.0.0.0:1".into();
        c.tile_size = 50;
        assert_eq!(field_of(c), "tile_size");
    }
}
