//! Config-file layer: flat `key=value` text or a JSON object, merged under
//! the command-line flags (flags win). Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::Path;

use gelu_lab::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') {
            Self::from_json(path, &text)
        } else {
            Self::from_key_values(path, &text)
        }
    }

    fn from_json(path: &Path, text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let obj = value.as_object().ok_or_else(|| {
            Error::Config(format!("{}: top-level JSON must be an object", path.display()))
        })?;
        let mut values = BTreeMap::new();
        for (k, v) in obj {
            let s = match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::Bool(b) => b.to_string(),
                other => {
                    return Err(Error::Config(format!(
                        "{}: key {k:?} holds unsupported value {other}",
                        path.display()
                    )))
                }
            };
            values.insert(k.clone(), s);
        }
        Ok(ConfigMap { values })
    }

    fn from_key_values(path: &Path, text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(ConfigMap { values })
    }

    /// Reject keys outside the accepted set for the active subcommand.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for k in self.values.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Config(format!(
                    "unknown config key {k:?}; accepted: {}",
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("config key {key}={raw:?} failed to parse"))
            }),
        }
    }
}

/// flag value > config value > default.
pub fn resolve<T: Clone>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}
