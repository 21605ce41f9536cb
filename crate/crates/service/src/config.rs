//! Service configuration from a TOML file, with environment overrides.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use explore_core::SessionConfig;
use serde::Deserialize;
use serde_json::Value;

use crate::error::{Result, ServiceError};

/// JSON object merged over the file's session defaults.
pub const SESSION_DEFAULTS_ENV: &str = "EXPLORE_SESSION_DEFAULTS";

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Defaults for every new session; requests override per field.
    #[serde(default)]
    pub session: SessionConfig,
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: default_listen(),
            manifest: None,
            session: SessionConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| ServiceError::Parse(e.to_string()))
    }

    /// Applies a JSON override document to the session defaults.
    pub fn apply_session_overrides(&mut self, json: &str) -> Result<()> {
        let patch: Value = serde_json::from_str(json).map_err(|e| ServiceError::Parse(e.to_string()))?;
        self.session = merged_config(&self.session, &patch).map_err(ServiceError::Parse)?;
        self.session.validate()?;
        Ok(())
    }
}

/// Recursively overlays `patch` onto `base`; non-object values replace.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// `base` with `patch` overlaid, rejecting unknown fields.
pub fn merged_config(base: &SessionConfig, patch: &Value) -> std::result::Result<SessionConfig, String> {
    let mut doc = serde_json::to_value(base).map_err(|e| e.to_string())?;
    merge(&mut doc, patch);
    serde_json::from_value(doc).map_err(|e| e.to_string())
}
