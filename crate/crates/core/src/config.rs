//! Plain-text `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Later assignments override earlier ones, and `--set` flags override the
//! file. Every key a command reads is recorded with its resolved value so the
//! manifest can reproduce the run.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
    resolved: RefCell<BTreeMap<String, String>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            c.set(k.trim(), v.trim())?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn from_map(map: BTreeMap<String, String>) -> Self {
        Self { values: map, resolved: RefCell::default() }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::Config(format!("bad key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override must be key=value, got {kv:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn record(&self, key: &str, value: &str) {
        self.resolved.borrow_mut().insert(key.to_string(), value.to_string());
    }

    fn parse_value<T: FromStr>(&self, key: &str, raw: &str) -> Result<T> {
        raw.parse()
            .map_err(|_| Error::Config(format!("cannot parse {key} = {raw:?}")))
    }

    /// Value for `key`, or `default` (rendered into the manifest).
    pub fn get_or<T: FromStr + ToString>(&self, key: &str, default: T) -> Result<T> {
        match self.values.get(key) {
            Some(raw) => {
                let v = self.parse_value(key, raw)?;
                self.record(key, raw);
                Ok(v)
            }
            None => {
                self.record(key, &default.to_string());
                Ok(default)
            }
        }
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            Some(raw) => {
                let v = self.parse_value(key, raw)?;
                self.record(key, raw);
                Ok(Some(v))
            }
            None => Ok(None),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get_opt(key)?
            .ok_or_else(|| Error::Config(format!("missing required key {key}")))
    }

    pub fn get_str(&self, key: &str, default: &str) -> String {
        let v = self.values.get(key).cloned().unwrap_or_else(|| default.to_string());
        self.record(key, &v);
        v
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str, default: &str) -> Result<Vec<T>> {
        let raw = self.get_str(key, default);
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| self.parse_value(key, s))
            .collect()
    }

    /// Keys that were supplied but never read.
    pub fn unused_keys(&self) -> Vec<String> {
        let used = self.resolved.borrow();
        self.values.keys().filter(|k| !used.contains_key(*k)).cloned().collect()
    }

    /// Fails on keys the command did not read.
    pub fn reject_unused(&self) -> Result<()> {
        let unused = self.unused_keys();
        if unused.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown keys: {}", unused.join(", "))))
        }
    }

    /// Every key read so far with its effective value.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        self.resolved.borrow().clone()
    }

    /// Resolved values in file form.
    pub fn render(map: &BTreeMap<String, String>) -> String {
        map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
