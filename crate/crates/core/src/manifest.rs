//! Ordered `key=value` text files.
//!
//! One entry per line, keys unique, `#` starts a comment line, blank lines are
//! ignored. Keys may not contain `=` or whitespace; values are taken verbatim
//! up to the end of the line.

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append an entry; rejects malformed or duplicate keys.
    pub fn push(&mut self, key: impl Into<String>, value: impl Into<String>) -> Result<()> {
        let key = key.into();
        let value = value.into();
        if key.is_empty() || key.contains('=') || key.chars().any(char::is_whitespace) || key.starts_with('#') {
            return Err(Error::InvalidArgument(format!("invalid manifest key {key:?}")));
        }
        if value.contains('\n') || value.contains('\r') {
            return Err(Error::InvalidArgument(format!("manifest value for {key} spans lines")));
        }
        if self.get(&key).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate manifest key {key}")));
        }
        self.entries.push((key, value));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Value of a key that must be present.
    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Decode(format!("manifest is missing {key}")))
    }

    /// Parse a required value.
    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.require(key)?;
        v.parse()
            .map_err(|e| Error::Decode(format!("manifest {key}={v}: {e}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Entries whose key starts with `prefix`, with the prefix removed.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.iter().filter_map(move |(k, v)| k.strip_prefix(prefix).map(|rest| (rest, v)))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut m = Manifest::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Decode(format!("manifest line {}: expected key=value", i + 1)))?;
            m.push(k, v)
                .map_err(|e| Error::Decode(format!("manifest line {}: {e}", i + 1)))?;
        }
        Ok(m)
    }
}
