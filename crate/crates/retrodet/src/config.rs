//! Minimal key=value config files with [section] headers. One format across
//! all commands; '#' starts a comment.

use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config line {line}: {what}")]
    Syntax { line: usize, what: String },
    #[error("missing key {0}")]
    Missing(String),
    #[error("key {key}: {what}")]
    Value { key: String, what: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Parsed config: section -> key -> value. Keys outside any section live
/// under the empty section name.
#[derive(Debug, Clone, Default)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(inner) = line.strip_prefix('[') {
                let name = inner.strip_suffix(']').ok_or(ConfigError::Syntax {
                    line: idx + 1,
                    what: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                cfg.sections.entry(section.clone()).or_default();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax {
                line: idx + 1,
                what: format!("expected key=value, got {line:?}"),
            })?;
            cfg.sections
                .entry(section.clone())
                .or_default()
                .insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn sections(&self) -> impl Iterator<Item = (&String, &BTreeMap<String, String>)> {
        self.sections.iter()
    }

    pub fn section(&self, name: &str) -> Option<&BTreeMap<String, String>> {
        self.sections.get(name)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section).and_then(|s| s.get(key)).map(|s| s.as_str())
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str, ConfigError> {
        self.get(section, key)
            .ok_or_else(|| ConfigError::Missing(format!("[{section}] {key}")))
    }

    pub fn parse_value<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.require(section, key)?;
        raw.parse().map_err(|e| ConfigError::Value {
            key: format!("[{section}] {key}"),
            what: format!("cannot parse {raw:?}: {e}"),
        })
    }

    pub fn parse_or<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(section, key) {
            None => Ok(default),
            Some(_) => self.parse_value(section, key),
        }
    }

    pub fn parse_list<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Vec<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.require(section, key)?;
        if raw.is_empty() {
            return Ok(vec![]);
        }
        raw.split(',')
            .map(|x| {
                x.trim().parse().map_err(|e| ConfigError::Value {
                    key: format!("[{section}] {key}"),
                    what: format!("cannot parse element {x:?}: {e}"),
                })
            })
            .collect()
    }
}
