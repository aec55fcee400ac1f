//! Run configuration. Values come from built-in defaults, then an optional
//! TOML file, then command-line flags; the merged result is echoed into
//! every artifact the CLI writes.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::analysis::{DivisiveRule, RatingThresholds};
use crate::consistency::{SimilarityRange, Weights};
use crate::error::{Error, Result};
use crate::providers::RetryPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub timeout_secs: u64,
    /// Requests per minute; 0 disables the ceiling.
    pub rate_per_minute: u32,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: String::new(),
            timeout_secs: 60,
            rate_per_minute: 0,
        }
    }
}

impl EndpointConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingBackend {
    /// Vectors read from a directory written by an external encoder.
    #[default]
    Precomputed,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub backend: EmbeddingBackend,
    pub base_url: String,
    pub model: String,
    pub timeout_secs: u64,
    pub dir: Option<PathBuf>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            backend: EmbeddingBackend::Precomputed,
            base_url: "http://127.0.0.1:8000".into(),
            model: "clip-vit-l-14-336".into(),
            timeout_secs: 60,
            dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Providers {
    pub llm: EndpointConfig,
    pub vlm: EndpointConfig,
    pub embedding: EmbeddingConfig,
    pub decoder: PathBuf,
}

impl Default for Providers {
    fn default() -> Self {
        Self {
            llm: EndpointConfig {
                model: "gpt-4".into(),
                ..EndpointConfig::default()
            },
            vlm: EndpointConfig {
                model: "gpt-4-vision-preview".into(),
                ..EndpointConfig::default()
            },
            embedding: EmbeddingConfig::default(),
            decoder: PathBuf::from("ffmpeg"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constants {
    pub w1: f64,
    pub w2: f64,
    pub map_low: f64,
    pub map_high: f64,
    pub completion_threshold: f64,
    pub consistency_threshold: f64,
    pub divisive_spread: u8,
    pub dynamics_threshold: f64,
    pub fps: f64,
    pub frames: usize,
    pub replicates: usize,
    pub retries: u32,
    pub retry_base_ms: u64,
    pub max_in_flight: usize,
}

impl Default for Constants {
    fn default() -> Self {
        Self {
            w1: 2.0 / 3.0,
            w2: 1.0 / 3.0,
            map_low: 0.90,
            map_high: 0.98,
            completion_threshold: 3.66,
            consistency_threshold: 3.6,
            divisive_spread: 3,
            dynamics_threshold: 1.0,
            fps: 8.0,
            frames: 16,
            replicates: 5,
            retries: 3,
            retry_base_ms: 500,
            max_in_flight: 4,
        }
    }
}

impl Constants {
    pub fn weights(&self) -> Result<Weights> {
        let w = Weights {
            pass_rate: self.w1,
            consistency: self.w2,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn range(&self) -> Result<SimilarityRange> {
        let r = SimilarityRange {
            low: self.map_low,
            high: self.map_high,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn thresholds(&self) -> RatingThresholds {
        RatingThresholds {
            completion: self.completion_threshold,
            consistency: self.consistency_threshold,
        }
    }

    pub fn divisive_rule(&self) -> DivisiveRule {
        DivisiveRule {
            max_spread: self.divisive_spread,
        }
    }

    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            attempts: self.retries.max(1),
            base_delay: Duration::from_millis(self.retry_base_ms),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub providers: Providers,
    pub constants: Constants,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_toml(&std::fs::read_to_string(p)?),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.constants.weights()?;
        self.constants.range()?;
        if self.constants.frames == 0 {
            return Err(Error::validation("constants.frames must be >= 1"));
        }
        if self.constants.fps.is_nan() || self.constants.fps <= 0.0 {
            return Err(Error::validation("constants.fps must be positive"));
        }
        Ok(())
    }

    /// Value embedded in output artifacts.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
