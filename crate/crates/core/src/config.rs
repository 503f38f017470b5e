//! Declarative run configuration. Parsed from a single JSON document;
//! unknown keys are rejected so hyperparameter typos cannot silently
//! corrupt a run.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::Scale;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub embedding: EmbeddingConfig,
    pub eval: EvalConfig,
    pub output_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub train: String,
    pub valid: String,
    pub test: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Spn {
        m_min: usize,
        rho: f64,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default)]
        seed: u64,
    },
    Mt {
        components: usize,
        #[serde(default = "default_em_iters")]
        iters: usize,
        #[serde(default = "default_em_tol")]
        tol: f64,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl ModelConfig {
    pub fn seed(&self) -> u64 {
        match self {
            ModelConfig::Spn { seed, .. } | ModelConfig::Mt { seed, .. } => *seed,
        }
    }

    pub fn with_seed(mut self, new_seed: u64) -> Self {
        match &mut self {
            ModelConfig::Spn { seed, .. } | ModelConfig::Mt { seed, .. } => *seed = new_seed,
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum EmbeddingConfig {
    Query {
        k: usize,
        min_side: usize,
        max_side: usize,
        #[serde(default = "default_scale")]
        scale: Scale,
        #[serde(default)]
        seed: u64,
    },
    Patch {
        s: usize,
        d: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default = "default_scale")]
        scale: Scale,
        #[serde(default)]
        seed: u64,
    },
}

impl EmbeddingConfig {
    pub fn scale(&self) -> Scale {
        match self {
            EmbeddingConfig::Query { scale, .. } | EmbeddingConfig::Patch { scale, .. } => *scale,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            EmbeddingConfig::Query { seed, .. } | EmbeddingConfig::Patch { seed, .. } => *seed,
        }
    }

    pub fn with_seed(mut self, new_seed: u64) -> Self {
        match &mut self {
            EmbeddingConfig::Query { seed, .. } | EmbeddingConfig::Patch { seed, .. } => {
                *seed = new_seed
            }
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_grid")]
    pub c_grid: Vec<f64>,
    pub step: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
}

fn default_alpha() -> f64 {
    0.1
}
fn default_em_iters() -> usize {
    100
}
fn default_em_tol() -> f64 {
    1e-4
}
fn default_scale() -> Scale {
    Scale::Log
}
fn default_stride() -> usize {
    1
}
fn default_grid() -> Vec<f64> {
    crate::eval::DEFAULT_C_GRID.to_vec()
}
fn default_max_iters() -> usize {
    1000
}
fn default_grad_tol() -> f64 {
    1e-5
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.width == 0 || self.dataset.height == 0 {
            return Err(Error::Config("dataset geometry must be positive".into()));
        }
        if self.eval.step == 0 {
            return Err(Error::Config("eval.step must be >= 1".into()));
        }
        if self.eval.c_grid.is_empty() {
            return Err(Error::Config("eval.c_grid must be non-empty".into()));
        }
        match &self.embedding {
            EmbeddingConfig::Query {
                min_side, max_side, ..
            } => {
                if *min_side < 1 || min_side > max_side {
                    return Err(Error::Config(
                        "embedding needs 1 <= min_side <= max_side".into(),
                    ));
                }
            }
            EmbeddingConfig::Patch { s, d, stride, .. } => {
                if *s == 0 || *d == 0 || *stride == 0 {
                    return Err(Error::Config("patch settings must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialized form, recorded in run metadata.
    pub fn hash(&self) -> String {
        use sha2::Digest;
        let digest = sha2::Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
