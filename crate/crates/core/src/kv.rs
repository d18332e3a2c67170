//! Flat `key = value` text used by configs, manifests and checkpoints.

use std::str::FromStr;

use indexmap::IndexMap;

use crate::error::{Error, Result};

/// Parsed `key = value` lines; `#` starts a comment line. Keys are
/// consumed as they are read so leftovers can be reported as unknown.
#[derive(Clone, Debug, Default)]
pub struct Kv {
    entries: IndexMap<String, (String, usize)>,
    used: Vec<bool>,
}

impl Kv {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = IndexMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {line:?}", i + 1)))?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            if entries.insert(key.clone(), (v.trim().to_string(), i + 1)).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key}", i + 1)));
            }
        }
        let used = vec![false; entries.len()];
        Ok(Kv { entries, used })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Parses and consumes `key` if present.
    pub fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        let Some((i, _, (value, line))) = self.entries.get_full(key) else {
            return Ok(None);
        };
        self.used[i] = true;
        value
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("line {line}: cannot parse {key} = {value:?}")))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::Config(format!("missing required key {key}")))
    }

    /// Overwrites `target` when `key` is present.
    pub fn update<T: FromStr>(&mut self, key: &str, target: &mut T) -> Result<()> {
        if let Some(v) = self.get(key)? {
            *target = v;
        }
        Ok(())
    }

    /// Fails on the first key nobody asked for.
    pub fn reject_unknown(&self) -> Result<()> {
        match self.entries.iter().zip(&self.used).find(|(_, used)| !**used) {
            Some(((k, (_, line)), _)) => Err(Error::Config(format!("line {line}: unknown key {k}"))),
            None => Ok(()),
        }
    }
}
