use std::collections::BTreeMap;

use serde::Serialize;
use tilscope_core::helm::{HelmParams, INFLAMMATORY};

use crate::config::{ConfigError, RemoteModelConfig};

pub const BUILTIN_HELM: &str = "helm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Builtin,
    Remote,
}

#[derive(Debug, Clone)]
pub enum ModelBackend {
    Helm(HelmParams),
    Remote(RemoteModelConfig),
}

#[derive(Debug, Clone)]
pub struct ModelEntry {
    pub name: String,
    pub classes: Vec<String>,
    pub backend: ModelBackend,
}

/// What `GET /models` reports per entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub name: String,
    pub kind: ModelKind,
    pub classes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl ModelEntry {
    pub fn kind(&self) -> ModelKind {
        match self.backend {
            ModelBackend::Helm(_) => ModelKind::Builtin,
            ModelBackend::Remote(_) => ModelKind::Remote,
        }
    }

    pub fn summary(&self) -> ModelSummary {
        ModelSummary {
            name: self.name.clone(),
            kind: self.kind(),
            classes: self.classes.clone(),
            endpoint: match &self.backend {
                ModelBackend::Remote(r) => Some(r.endpoint.clone()),
                ModelBackend::Helm(_) => None,
            },
        }
    }
}

/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct ModelRegistry {
    entries: BTreeMap<String, ModelEntry>,
}

impl ModelRegistry {
    /// The builtin `helm` entry plus every configured remote. Duplicate
    /// names (including a remote called `helm`) are refused.
    pub fn new(remotes: &[RemoteModelConfig]) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        entries.insert(
            BUILTIN_HELM.to_string(),
            ModelEntry {
                name: BUILTIN_HELM.into(),
                classes: vec![INFLAMMATORY.into()],
                backend: ModelBackend::Helm(HelmParams::default()),
            },
        );
        for r in remotes {
            if r.name.is_empty() {
                return Err(ConfigError::InvalidModel {
                    name: r.name.clone(),
                    reason: "empty name".into(),
                });
            }
            if r.classes.len() < 2 {
                return Err(ConfigError::InvalidModel {
                    name: r.name.clone(),
                    reason: "vocabulary needs background plus at least one class".into(),
                });
            }
            if !r.endpoint.starts_with("http://") && !r.endpoint.starts_with("https://") {
                return Err(ConfigError::InvalidModel {
                    name: r.name.clone(),
                    reason: format!("endpoint {:?} is not an http(s) URL", r.endpoint),
                });
            }
            if entries.contains_key(&r.name) {
                return Err(ConfigError::DuplicateModel(r.name.clone()));
            }
            entries.insert(
                r.name.clone(),
                ModelEntry {
                    name: r.name.clone(),
                    // background is implicit in the detections
                    classes: r.classes[1..].to_vec(),
                    backend: ModelBackend::Remote(r.clone()),
                },
            );
        }
        Ok(Self { entries })
    }

    pub fn get(&self, name: &str) -> Option<&ModelEntry> {
        self.entries.get(name)
    }

    pub fn summaries(&self) -> Vec<ModelSummary> {
        self.entries.values().map(ModelEntry::summary).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
