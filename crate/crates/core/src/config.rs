//! Flat `key = value` configuration files and run manifests.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique;
//! later assignments (e.g. command-line overrides) replace earlier ones.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            if kv.entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
        }
        Ok(kv)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Parsed value of `key`, or `None` when absent.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::Config(format!("key `{key}`: cannot parse `{v}`: {e}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Fails on any key outside `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        let unknown: Vec<&str> = self.entries.keys().map(String::as_str).filter(|k| !known.contains(k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))))
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl std::fmt::Display for KeyValues {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// Record of one tool invocation, written next to its outputs.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub subcommand: String,
    /// Resolved configuration, including defaults and paths.
    pub config: KeyValues,
    pub seed: Option<u64>,
    pub started: SystemTime,
    pub wall_clock: Duration,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: KeyValues, seed: Option<u64>) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config,
            seed,
            started: SystemTime::now(),
            wall_clock: Duration::ZERO,
        }
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = self.config.clone();
        kv.set("subcommand", &self.subcommand);
        kv.set("tool_version", env!("CARGO_PKG_VERSION"));
        if let Some(s) = self.seed {
            kv.set("seed", s);
        }
        let started = self.started.duration_since(UNIX_EPOCH).unwrap_or_default();
        kv.set("started_unix", started.as_secs());
        kv.set("wall_clock_s", format!("{:.3}", self.wall_clock.as_secs_f64()));
        kv
    }

    pub fn write(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.wall_clock = self.started.elapsed().unwrap_or_default();
        let path = path.as_ref();
        std::fs::write(path, self.to_key_values().to_string()).map_err(|e| Error::io(path, e))
    }
}
