//! Engine configuration, loadable from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::priors::ScoringConfig;
use crate::scene::{RelationConfig, SalienceWeights};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("config value out of range: {0}")]
    Invalid(String),
}

/// Relative weights of the soft constraints in ranked matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchWeights {
    pub attribute: f64,
    pub edge: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        MatchWeights {
            attribute: 1.0,
            edge: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Detections below this confidence are not treated as scene objects.
    pub min_confidence: f64,
    /// Laplace smoothing constant for relation priors.
    pub alpha: f64,
    pub vocab_path: Option<PathBuf>,
    pub index_dir: PathBuf,
    pub listen_addr: String,
    pub port: u16,
    pub relations: RelationConfig,
    pub salience: SalienceWeights,
    pub scoring: ScoringConfig,
    pub matching: MatchWeights,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            min_confidence: 0.5,
            alpha: 1.0,
            vocab_path: None,
            index_dir: PathBuf::from("horse-index"),
            listen_addr: "127.0.0.1".into(),
            port: 8080,
            relations: RelationConfig::default(),
            salience: SalienceWeights::default(),
            scoring: ScoringConfig::default(),
            matching: MatchWeights::default(),
        }
    }
}

fn unit(name: &str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{name} = {v} must lie in [0, 1]")))
    }
}

impl EngineConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: EngineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        EngineConfig::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("engine config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let r = &self.relations;
        for (name, v) in [
            ("relations.tau_v", r.tau_v),
            ("relations.tau_h", r.tau_h),
            ("relations.eps_on", r.eps_on),
            ("relations.tau_d", r.tau_d),
            ("relations.delta_near", r.delta_near),
            ("relations.on_min_overlap", r.on_min_overlap),
            ("min_confidence", self.min_confidence),
            ("salience.area", self.salience.area),
            ("salience.centrality", self.salience.centrality),
            ("scoring.theta", self.scoring.theta),
        ] {
            unit(name, v)?;
        }
        if !(r.kappa > 0.0 && r.kappa <= 1.0) {
            return Err(ConfigError::Invalid(format!("relations.kappa = {} must lie in (0, 1]", r.kappa)));
        }
        if !(r.sigma >= 1.0 && r.sigma.is_finite()) {
            return Err(ConfigError::Invalid(format!("relations.sigma = {} must be >= 1", r.sigma)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(ConfigError::Invalid(format!("alpha = {} must be > 0", self.alpha)));
        }
        if self.scoring.top_k == 0 {
            return Err(ConfigError::Invalid("scoring.top_k must be >= 1".into()));
        }
        let m = &self.matching;
        if !(m.attribute >= 0.0 && m.edge >= 0.0 && m.attribute.is_finite() && m.edge.is_finite()) {
            return Err(ConfigError::Invalid("matching weights must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Names of the settings that differ between two configs and affect
    /// stored index content.
    pub fn index_relevant_differences(&self, other: &EngineConfig) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.relations != other.relations {
            out.push("relations");
        }
        if self.salience != other.salience {
            out.push("salience");
        }
        if self.min_confidence != other.min_confidence {
            out.push("min_confidence");
        }
        if self.alpha != other.alpha {
            out.push("alpha");
        }
        out
    }
}
