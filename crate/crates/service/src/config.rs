use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

/// Server settings: a TOML file, then `FIND_BIND`, `FIND_PORT`,
/// `FIND_DATA_DIR` and `FIND_WORKERS` from the environment on top.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// 0 picks a free port.
    pub port: u16,
    pub data_dir: PathBuf,
    /// Concurrent train/apply/experiment jobs.
    pub workers: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1".into(),
            port: 8080,
            data_dir: PathBuf::from("find-data"),
            workers: 2,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: Option<&Path>) -> Result<ServiceConfig, ServiceError> {
        let base = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| ServiceError::Validation(format!("cannot read {}: {e}", path.display())))?;
                ServiceConfig::from_toml(&text)?
            }
            None => ServiceConfig::default(),
        };
        base.with_overrides(|key| std::env::var(key).ok())
    }

    pub fn from_toml(text: &str) -> Result<ServiceConfig, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::Validation(format!("service config: {e}")))
    }

    pub fn with_overrides(mut self, env: impl Fn(&str) -> Option<String>) -> Result<ServiceConfig, ServiceError> {
        let parse_err = |key: &str, value: &str| ServiceError::Validation(format!("{key}={value:?} is not valid"));
        if let Some(v) = env("FIND_BIND") {
            self.bind = v;
        }
        if let Some(v) = env("FIND_PORT") {
            self.port = v.parse().map_err(|_| parse_err("FIND_PORT", &v))?;
        }
        if let Some(v) = env("FIND_DATA_DIR") {
            self.data_dir = PathBuf::from(v);
        }
        if let Some(v) = env("FIND_WORKERS") {
            self.workers = v.parse().map_err(|_| parse_err("FIND_WORKERS", &v))?;
        }
        if self.workers == 0 {
            return Err(ServiceError::Validation("workers must be positive".into()));
        }
        Ok(self)
    }
}
