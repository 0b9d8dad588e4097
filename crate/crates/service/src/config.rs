use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PORT_ENV: &str = "TILSCOPE_PORT";
pub const ROOT_ENV: &str = "TILSCOPE_ROOT";

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_REMOTE_TIMEOUT_SECS: u64 = 120;
/// Largest annotate region, in pixels at the requested level.
pub const MAX_REGION_PIXELS: u64 = 4096 * 4096;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{var}={value:?} is not a valid port")]
    BadPort { var: &'static str, value: String },
    #[error("duplicate model name {0:?}")]
    DuplicateModel(String),
    #[error("model {name:?}: {reason}")]
    InvalidModel { name: String, reason: String },
}

/// A remote model as listed in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteModelConfig {
    pub name: String,
    pub endpoint: String,
    /// Class vocabulary, background first.
    pub classes: Vec<String>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub port: u16,
    pub bind: String,
    /// Directory holding `<slide>.dzi` + `<slide>_files/`.
    pub root: PathBuf,
    pub models: Vec<RemoteModelConfig>,
    /// Concurrent CPU-bound inference jobs; 0 = available cores.
    pub workers: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            port: DEFAULT_PORT,
            bind: "127.0.0.1".into(),
            root: PathBuf::from("slides"),
            models: Vec::new(),
            workers: 0,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Applies `TILSCOPE_PORT` / `TILSCOPE_ROOT` from `lookup`.
    pub fn apply_env(mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        if let Some(v) = lookup(PORT_ENV) {
            self.port = v.trim().parse().map_err(|_| ConfigError::BadPort {
                var: PORT_ENV,
                value: v.clone(),
            })?;
        }
        if let Some(v) = lookup(ROOT_ENV) {
            self.root = PathBuf::from(v);
        }
        Ok(self)
    }

    pub fn from_env(self) -> Result<Self, ConfigError> {
        self.apply_env(|k| std::env::var(k).ok())
    }

    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}

impl RemoteModelConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs.unwrap_or(DEFAULT_REMOTE_TIMEOUT_SECS))
    }
}
