//! Flat `key = value` text with `#` comments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed entries, each remembering its source line.
#[derive(Debug, Clone)]
pub struct KeyValues {
    path: PathBuf,
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::format(path, line, format!("expected `key = value`, got `{content}`")))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::format(path, line, "empty key"));
            }
            if let Some((_, first)) = entries.insert(key.clone(), (value.trim().to_string(), line)) {
                return Err(Error::format(
                    path,
                    line,
                    format!("duplicate key `{key}` (first set on line {first})"),
                ));
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Rejects any key outside `allowed`, naming the first offender.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for (key, (_, line)) in &self.entries {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::format(&self.path, *line, format!("unknown key `{key}`")));
            }
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    fn line(&self, key: &str) -> usize {
        self.entries.get(key).map(|(_, l)| *l).unwrap_or(0)
    }

    fn bad(&self, key: &str, message: impl std::fmt::Display) -> Error {
        Error::format(&self.path, self.line(key), format!("key `{key}`: {message}"))
    }

    /// Parsed value, or `None` when the key is absent.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| self.bad(key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?
            .ok_or_else(|| Error::format(&self.path, 0, format!("missing required key `{key}`")))
    }

    /// Comma-separated list; an empty value is an empty list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>()
                    .map_err(|e| self.bad(key, format!("cannot parse `{s}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Comma-separated inclusive `a-b` day ranges.
    pub fn get_ranges(&self, key: &str) -> Result<Option<Vec<(usize, usize)>>> {
        let Some(items) = self.get_list::<String>(key)? else {
            return Ok(None);
        };
        items
            .iter()
            .map(|item| {
                let (a, b) = item
                    .split_once('-')
                    .ok_or_else(|| self.bad(key, format!("expected `start-end`, got `{item}`")))?;
                let parse = |s: &str| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|e| self.bad(key, format!("cannot parse `{s}`: {e}")))
                };
                Ok((parse(a)?, parse(b)?))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Checks the `format_version` key when present.
    pub fn check_version(&self, expected: u32) -> Result<()> {
        match self.get::<u32>("format_version")? {
            None => Ok(()),
            Some(v) if v == expected => Ok(()),
            Some(v) => Err(self.bad("format_version", format!("unsupported version {v}, expected {expected}"))),
        }
    }
}
