use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::attribution::{OutputSpace, DEFAULT_PERMUTATIONS};
use crate::corpus::SplitPolicy;
use crate::encoder::{EncoderConfig, MlmTrainConfig};
use crate::reasoner::{ReasonerConfig, ReasonerTrainConfig};

/// Prefix of environment variables that override config-file values.
pub const ENV_PREFIX: &str = "R2E_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub artifacts: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            artifacts: PathBuf::from("artifacts"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    /// Evidence passages per answer.
    pub k: usize,
    /// Bias-correction strength.
    pub c: f64,
    /// Shapley permutations before antithetic doubling.
    pub permutations: usize,
    pub output_space: OutputSpace,
    pub explain_seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            k: 64,
            c: 0.5,
            permutations: DEFAULT_PERMUTATIONS,
            output_space: OutputSpace::Probability,
            explain_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: String,
    pub session_ttl_secs: u64,
    /// Directory of static UI assets, if any.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            session_ttl_secs: 30 * 60,
            static_dir: None,
        }
    }
}

/// Everything the pipeline stages and the service read from the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct R2eConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub splits: SplitPolicy,
    pub encoder: EncoderConfig,
    pub mlm_train: MlmTrainConfig,
    pub reasoner: ReasonerConfig,
    pub reasoner_train: ReasonerTrainConfig,
    pub inference: InferenceConfig,
    pub server: ServerConfig,
}

impl Default for R2eConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: PathsConfig::default(),
            splits: SplitPolicy::Random {
                s2_docs: 0,
                s3_docs: 0,
                seed: 0,
            },
            encoder: EncoderConfig::default(),
            mlm_train: MlmTrainConfig::default(),
            reasoner: ReasonerConfig::default(),
            reasoner_train: ReasonerTrainConfig::default(),
            inference: InferenceConfig::default(),
            server: ServerConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, PipelineError>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e: T::Err| PipelineError::Config(format!("{ENV_PREFIX}{key}: {e}")))
}

impl R2eConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(0.0..=1.0).contains(&self.inference.c) {
            return Err(PipelineError::Config(format!("c = {} is outside [0, 1]", self.inference.c)));
        }
        if self.inference.k == 0 || self.inference.permutations == 0 {
            return Err(PipelineError::Config("k and permutations must be positive".into()));
        }
        self.reasoner.validate()?;
        Ok(())
    }

    /// Applies `R2E_*` overrides from `vars` (usually `std::env::vars()`).
    /// Unknown `R2E_` keys are ignored.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<(), PipelineError> {
        for (key, v) in vars {
            let Some(key) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            match key {
                "SEED" => self.seed = parse(key, &v)?,
                "ARTIFACTS" => self.paths.artifacts = PathBuf::from(v),
                "K" => self.inference.k = parse(key, &v)?,
                "C" => self.inference.c = parse(key, &v)?,
                "PERMUTATIONS" => self.inference.permutations = parse(key, &v)?,
                "OUTPUT_SPACE" => self.inference.output_space = parse(key, &v)?,
                "BIND" => self.server.bind = v,
                "SESSION_TTL_SECS" => self.server.session_ttl_secs = parse(key, &v)?,
                "STATIC_DIR" => self.server.static_dir = Some(PathBuf::from(v)),
                _ => {}
            }
        }
        self.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_files() {
        let cfg = R2eConfig::from_toml("[inference]\nc = 0.25\n").unwrap();
        assert_eq!(cfg.inference.c, 0.25);
        assert_eq!(cfg.inference.k, 64);
        assert_eq!(cfg.inference.permutations, 100);
        assert_eq!(cfg.server.session_ttl_secs, 1800);
        let back = R2eConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn env_overrides_and_validation() {
        let mut cfg = R2eConfig::default();
        cfg.apply_env([
            ("R2E_K".to_string(), "16".to_string()),
            ("R2E_BIND".to_string(), "0.0.0.0:9".to_string()),
            ("HOME".to_string(), "/x".to_string()),
        ])
        .unwrap();
        assert_eq!(cfg.inference.k, 16);
        assert_eq!(cfg.server.bind, "0.0.0.0:9");
        assert!(cfg.apply_env([("R2E_C".to_string(), "2".to_string())]).is_err());
        assert!(R2eConfig::default().apply_env([("R2E_K".to_string(), "x".to_string())]).is_err());
    }
}
