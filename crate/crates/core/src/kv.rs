//! Line-oriented `key = value` blocks, used by config files, the binary
//! headers of checkpoints and datasets, and report records.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ordered key/value pairs. Keys are unique.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvBlock {
    entries: Vec<(String, String)>,
}

impl KvBlock {
    /// Appends or replaces `key`.
    pub fn push(&mut self, key: &str, value: impl fmt::Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Overlays `other` on top of `self`.
    pub fn merge(&mut self, other: &KvBlock) {
        for (k, v) in other.iter() {
            self.push(k, v);
        }
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Format(format!("missing key `{key}`")))?;
        raw.parse()
            .map_err(|e| Error::Format(format!("bad value `{raw}` for `{key}`: {e}")))
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        match self.get(key) {
            Some(_) => self.parse(key),
            None => Ok(default),
        }
    }

    /// Comma-separated list value.
    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Format(format!("missing key `{key}`")))?;
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e| Error::Format(format!("bad list item `{s}` for `{key}`: {e}")))
            })
            .collect()
    }

    /// Fails on the first key not in `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.entries.iter().find(|(k, _)| !known.contains(&k.as_str())) {
            Some((k, _)) => Err(Error::Config(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }

    /// Single-line `k=v k=v` rendering for report records.
    pub fn to_record(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Parses a single-line record produced by [`KvBlock::to_record`].
    pub fn from_record(line: &str) -> Result<Self> {
        let mut kv = KvBlock::default();
        for field in line.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("record field `{field}` lacks `=`")))?;
            if kv.get(k).is_some() {
                return Err(Error::Format(format!("duplicate key `{k}`")));
            }
            kv.push(k, v);
        }
        Ok(kv)
    }
}

impl fmt::Display for KvBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

impl FromStr for KvBlock {
    type Err = Error;

    /// Accepts `key = value` lines; blank lines and `#` comments are skipped.
    fn from_str(s: &str) -> Result<Self> {
        let mut kv = KvBlock::default();
        for (lineno, line) in s.lines().enumerate() {
            let line = match line.find('#') {
                Some(i) => &line[..i],
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Format(format!("line {}: empty key", lineno + 1)));
            }
            if kv.get(k).is_some() {
                return Err(Error::Format(format!(
                    "line {}: duplicate key `{k}`",
                    lineno + 1
                )));
            }
            kv.push(k, v);
        }
        Ok(kv)
    }
}
