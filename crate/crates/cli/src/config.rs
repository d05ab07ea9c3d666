//! Flat `key = value` run configuration.
//!
//! A config file holds one pair per line; `#` starts a comment. The file must
//! carry `version = 1`. Values from `--set key=value` are applied in order
//! after the file, so the last assignment of a key wins.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Keys every subcommand accepts.
pub const COMMON_KEYS: &[&str] = &["version", "seed", "time"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("line {}: expected key = value", i + 1)))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(CliError::config(format!("line {}: empty key", i + 1)));
            }
            if values.insert(key.to_string(), v.trim().to_string()).is_some() {
                return Err(CliError::config(format!("line {}: duplicate key '{key}'", i + 1)));
            }
        }
        if !values.contains_key("version") {
            return Err(CliError::config(format!(
                "config file has no 'version' key, expected version = {SCHEMA_VERSION}"
            )));
        }
        let cfg = Self { values };
        cfg.check_version()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> CliResult<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("override '{assignment}' is not key=value")))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(CliError::config(format!("override '{assignment}' has an empty key")));
        }
        self.set(key, v.trim());
        Ok(())
    }

    pub fn check_version(&self) -> CliResult<()> {
        match self.values.get("version") {
            None => Ok(()),
            Some(v) if v.parse::<u32>() == Ok(SCHEMA_VERSION) => Ok(()),
            Some(v) => Err(CliError::config(format!(
                "config version '{v}' does not match schema version {SCHEMA_VERSION}"
            ))),
        }
    }

    /// Rejects keys outside [`COMMON_KEYS`] and `allowed`.
    pub fn check_keys(&self, command: &str, allowed: &[&str]) -> CliResult<()> {
        let unknown: Vec<&str> = self
            .values
            .keys()
            .map(String::as_str)
            .filter(|k| !COMMON_KEYS.contains(k) && !allowed.contains(k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::config(format!(
                "unknown key(s) for '{command}': {}",
                unknown.join(", ")
            )))
        }
    }

    pub fn opt<T>(&self, key: &str) -> CliResult<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::config(format!("key '{key}': cannot parse '{v}': {e}")))
            })
            .transpose()
    }

    pub fn get<T>(&self, key: &str, default: T) -> CliResult<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    pub fn require<T>(&self, key: &str) -> CliResult<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.opt(key)?
            .ok_or_else(|| CliError::config(format!("missing required key '{key}'")))
    }

    /// Comma-separated list; an absent key gives `default`.
    pub fn list<T>(&self, key: &str, default: Vec<T>) -> CliResult<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(raw) = self.values.get(key) else {
            return Ok(default);
        };
        let items = raw
            .split(',')
            .map(str::trim)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::config(format!("key '{key}': cannot parse '{v}': {e}")))
            })
            .collect::<CliResult<Vec<T>>>()?;
        if items.is_empty() {
            return Err(CliError::config(format!("key '{key}' is an empty list")));
        }
        Ok(items)
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.get("seed", 0)
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// Sorted `key=value` lines, the input to [`Config::hash`].
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Hex SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}
