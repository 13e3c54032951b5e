//! Plain-text `key = value` configuration with optional `[section]` headers.
//!
//! `#` starts a comment. Keys before the first header belong to the unnamed
//! section `""`. Repeated keys inside one section are rejected.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    origin: String,
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Config {
            origin: origin.to_string(),
            sections: BTreeMap::new(),
        };
        cfg.sections.insert(String::new(), BTreeMap::new());
        let mut current = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| cfg.err(line_no, "unterminated section header"))?
                    .trim();
                if name.is_empty() {
                    return Err(cfg.err(line_no, "empty section name"));
                }
                current = name.to_string();
                cfg.sections.entry(current.clone()).or_default();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| cfg.err(line_no, "expected `key = value`"))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(cfg.err(line_no, "empty key"));
            }
            let section = cfg.sections.get_mut(&current).expect("section exists");
            if section.contains_key(k) {
                let msg = format!("duplicate key `{k}`");
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: line_no,
                    field: 1,
                    message: msg,
                });
            }
            section.insert(
                k.to_string(),
                Entry {
                    value: v.to_string(),
                    line: line_no,
                },
            );
        }
        Ok(cfg)
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.origin.clone(),
            line,
            field: 0,
            message: message.into(),
        }
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(String::as_str).filter(|s| !s.is_empty())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|e| e.value.as_str())
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str> {
        self.get(section, key).ok_or_else(|| {
            Error::Invalid(format!(
                "{}: missing key `{}`",
                self.origin,
                qualified(section, key)
            ))
        })
    }

    /// Parses `section.key`, falling back to `default` when absent.
    pub fn parse_or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        match self.sections.get(section).and_then(|s| s.get(key)) {
            None => Ok(default),
            Some(e) => e.value.parse().map_err(|_| Error::Parse {
                path: self.origin.clone(),
                line: e.line,
                field: 2,
                message: format!("cannot parse `{}` for `{}`", e.value, qualified(section, key)),
            }),
        }
    }

    pub fn parse_required<T: FromStr>(&self, section: &str, key: &str) -> Result<T> {
        self.require(section, key)?;
        let e = &self.sections[section][key];
        e.value.parse().map_err(|_| Error::Parse {
            path: self.origin.clone(),
            line: e.line,
            field: 2,
            message: format!("cannot parse `{}` for `{}`", e.value, qualified(section, key)),
        })
    }

    /// Comma-separated list value.
    pub fn list_or<T: FromStr>(&self, section: &str, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.sections.get(section).and_then(|s| s.get(key)) {
            None => Ok(default),
            Some(e) => e
                .value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse().map_err(|_| Error::Parse {
                        path: self.origin.clone(),
                        line: e.line,
                        field: 2,
                        message: format!("cannot parse list item `{s}` for `{}`", qualified(section, key)),
                    })
                })
                .collect(),
        }
    }

    /// Rejects keys in `section` that are not listed in `known`.
    pub fn check_keys(&self, section: &str, known: &[&str]) -> Result<()> {
        if let Some(s) = self.sections.get(section) {
            for (k, e) in s {
                if !known.contains(&k.as_str()) {
                    return Err(Error::Parse {
                        path: self.origin.clone(),
                        line: e.line,
                        field: 1,
                        message: format!("unknown key `{}`", qualified(section, k)),
                    });
                }
            }
        }
        Ok(())
    }
}

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}
