//! `key = value` text documents.
//!
//! One pair per line. `#` starts a comment, blank lines are ignored, keys
//! may repeat (the manifest uses one `record` line per pair).

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    /// Byte offset of the line start.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyValueDocument {
    path: PathBuf,
    entries: Vec<Entry>,
}

impl KeyValueDocument {
    pub fn parse(text: &str, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut entries = Vec::new();
        let mut offset = 0;
        for raw in text.split_inclusive('\n') {
            let line = raw.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                let Some((key, value)) = line.split_once('=') else {
                    return Err(Error::Parse {
                        path,
                        offset,
                        message: format!("expected `key = value`, got {line:?}"),
                    });
                };
                let key = key.trim();
                if key.is_empty() || key.contains(char::is_whitespace) {
                    return Err(Error::Parse {
                        path,
                        offset,
                        message: format!("invalid key {key:?}"),
                    });
                }
                entries.push(Entry {
                    key: key.to_string(),
                    value: value.trim().to_string(),
                    offset,
                });
            }
            offset += raw.len();
        }
        Ok(Self { path, entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a Entry> + 'a {
        self.entries.iter().filter(move |e| e.key == key)
    }

    /// The single entry for `key`; repeated scalar keys are an error.
    pub fn entry<'a>(&'a self, key: &str) -> Result<Option<&'a Entry>> {
        let mut it = self.entries.iter().filter(|e| e.key == key);
        let first = it.next();
        if let Some(dup) = it.next() {
            return Err(Error::Parse {
                path: self.path.clone(),
                offset: dup.offset,
                message: format!("duplicate key {key:?}"),
            });
        }
        Ok(first)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(e) = self.entry(key)? else {
            return Ok(None);
        };
        e.value
            .parse()
            .map(Some)
            .map_err(|err: T::Err| Error::Parse {
                path: self.path.clone(),
                offset: e.offset,
                message: format!("bad value for {key}: {err}"),
            })
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| Error::Format {
            path: self.path.clone(),
            message: format!("missing key {key:?}"),
        })
    }

    /// Fails on the first key outside `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self
            .entries
            .iter()
            .find(|e| !known.contains(&e.key.as_str()))
        {
            Some(e) => Err(Error::Parse {
                path: self.path.clone(),
                offset: e.offset,
                message: format!("unknown key {:?}", e.key),
            }),
            None => Ok(()),
        }
    }
}

/// Scientific notation with 17 significant digits, which reads back to the
/// same bits.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}
