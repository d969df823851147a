//! Flat `key = value` text used for model, training and dataset configs.
//!
//! Lines starting with `#` and blank lines are ignored. Serialization writes
//! keys in sorted order so identical configs produce identical bytes.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::format("config", format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::format("config", format!("line {}: empty key", lineno + 1)));
            }
            entries.insert(key.to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("cannot parse {key} = {raw:?}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_serialize_sorted() {
        let kv = KeyValues::parse("# comment\nz = 1\n\na=hello world\n").unwrap();
        assert_eq!(kv.get_str("a"), Some("hello world"));
        assert_eq!(kv.get::<u32>("z").unwrap(), Some(1));
        assert_eq!(kv.to_text(), "a=hello world\nz=1\n");
        assert_eq!(KeyValues::parse(&kv.to_text()).unwrap(), kv);
    }

    #[test]
    fn malformed_lines_and_values() {
        assert!(KeyValues::parse("novalue\n").is_err());
        assert!(KeyValues::parse("=3\n").is_err());
        let kv = KeyValues::parse("n = abc").unwrap();
        assert!(kv.get::<u32>("n").is_err());
    }

    #[test]
    fn overrides_replace_values() {
        let mut kv = KeyValues::parse("lr=0.1").unwrap();
        kv.apply_override("lr = 0.01").unwrap();
        assert_eq!(kv.get::<f64>("lr").unwrap(), Some(0.01));
        assert!(kv.apply_override("broken").is_err());
    }
}
