//! Flat `key = value` run settings: defaults, then a config file, then
//! command-line overrides. Unknown keys are rejected at every layer.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// File name of the resolved settings written next to every run's outputs.
pub const SNAPSHOT_NAME: &str = "config.resolved";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// The keys of `defaults` are the only keys this config accepts.
    pub fn with_defaults(defaults: &[(&str, &str)]) -> Self {
        Self {
            values: defaults.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.into();
                Ok(())
            }
            None => Err(Error::Parameter(format!("unknown setting {key:?}"))),
        }
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("{origin}: line {}", k + 1), "expected key = value"))?;
            self.set(key.trim(), value.trim()).map_err(|e| Error::format(format!("{origin}: line {}", k + 1), e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Parameter(format!("unknown setting {key:?}")))
    }

    pub fn get<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|e| Error::Parameter(format!("setting {key} = {raw:?}: {e}")))
    }

    /// `None` for an empty value.
    pub fn get_opt<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if self.raw(key)?.is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    /// Like [`RunConfig::get_opt`], but an empty value is an error naming the key.
    pub fn require<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get_opt(key)?
            .ok_or_else(|| Error::Parameter(format!("setting {key} is required")))
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        let path = dir.join(SNAPSHOT_NAME);
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }
}
