//! Flat `key = value` files used for model descriptors and run configs.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed `key = value` pairs. Keys are consumed with [`KeyValues::take`];
/// [`KeyValues::finish`] rejects whatever is left over.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    /// `#` starts a comment line; blank lines are skipped; duplicate keys are
    /// an error.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(i + 1, format!("expected `key = value`, got {line:?}")));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(i + 1, "empty key"));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::parse(i + 1, format!("duplicate key {key:?}")));
            }
        }
        Ok(KeyValues { entries })
    }

    /// Sets or overrides a value.
    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn take_raw(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.entries
            .remove(key)
            .map(|v| v.parse().map_err(|e| Error::Config(format!("{key} = {v:?}: {e}"))))
            .transpose()
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let Some(v) = self.entries.remove(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|item| {
                item.trim()
                    .parse()
                    .map_err(|e| Error::Config(format!("{key} = {v:?}: {e}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let keys: Vec<&str> = self.entries.keys().map(String::as_str).collect();
        Err(Error::Config(format!("unknown keys: {}", keys.join(", "))))
    }
}

/// Formats a list the way [`KeyValues::take_list`] reads it.
pub fn join_list<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_lists_and_comments() {
        let mut kv = KeyValues::parse("# run\nbatch_size = 32\n\nkernels=3, 3,20\nname = a b\n").unwrap();
        assert_eq!(kv.take::<usize>("batch_size").unwrap(), Some(32));
        assert_eq!(kv.take_list::<usize>("kernels").unwrap(), Some(vec![3, 3, 20]));
        assert_eq!(kv.take_raw("name").as_deref(), Some("a b"));
        assert_eq!(kv.take_or("missing", 7u8).unwrap(), 7);
        kv.finish().unwrap();
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        let kv = KeyValues::parse("a = 1\nb = 2\n").unwrap();
        let err = kv.finish().unwrap_err().to_string();
        assert!(err.contains("a, b"), "{err}");
        assert!(matches!(KeyValues::parse("a = 1\na = 2"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(KeyValues::parse("novalue"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn bad_value_names_the_key() {
        let mut kv = KeyValues::parse("lr = fast").unwrap();
        let err = kv.take::<f64>("lr").unwrap_err().to_string();
        assert!(err.contains("lr"));
    }
}
