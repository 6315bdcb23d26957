//! Flat `key = value` configuration text. `#` starts a comment line; keys are unique.

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KvError {
    #[error("{0}")]
    Read(String),
    #[error("line {line}: expected 'key = value'")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key '{key}'")]
    Duplicate { line: usize, key: String },
    #[error("unknown key '{0}'")]
    Unknown(String),
    #[error("invalid value '{value}' for '{key}': {reason}")]
    Value { key: String, value: String, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut kv = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(KvError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(KvError::Syntax { line: i + 1 });
            }
            if kv.get(k).is_some() {
                return Err(KvError::Duplicate { line: i + 1, key: k.to_string() });
            }
            kv.entries.push((k.to_string(), v.to_string()));
        }
        Ok(kv)
    }

    /// Parses a comma-separated `key=value` list such as `fx=100,fy=100`.
    pub fn parse_inline(list: &str) -> Result<Self, KvError> {
        Self::parse(&list.split(',').collect::<Vec<_>>().join("\n"))
    }

    pub fn load(path: &Path) -> Result<Self, KvError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KvError::Read(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Inserts or replaces `key`.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    /// Overlays every entry of `other` onto `self`.
    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.set(k, v.clone());
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse().map_err(|e: T::Err| KvError::Value {
                    key: key.to_string(),
                    value: v.to_string(),
                    reason: e.to_string(),
                })
            })
            .transpose()
    }

    /// Rejects any key not in `known`.
    pub fn check_known(&self, known: &[&str]) -> Result<(), KvError> {
        let known: BTreeSet<&str> = known.iter().copied().collect();
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(KvError::Unknown(k.to_string())),
            None => Ok(()),
        }
    }
}
