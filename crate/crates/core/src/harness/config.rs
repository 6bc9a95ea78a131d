//! Flat key-value config files with typed sections:
//!
//! ```text
//! # comment
//! [model]
//! widths = 8,16,16,2
//! activation = relu
//! ```
//!
//! One `key = value` per line; section names in brackets; `#` starts a
//! comment. Grammar and the full key reference live in docs/CONFIG.md.

use crate::error::{Error, Result};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Default)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') || line.len() < 3 {
                    return Err(Error::Config(format!("line {}: bad section header", i + 1)));
                }
                current = line[1..line.len() - 1].trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let Some(eq) = line.find('=') else {
                return Err(Error::Config(format!("line {}: expected key = value", i + 1)));
            };
            let key = line[..eq].trim().to_string();
            let value = line[eq + 1..].trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            if current.is_empty() {
                return Err(Error::Config(format!("line {}: key before any [section]", i + 1)));
            }
            sections.get_mut(&current).unwrap().insert(key, value);
        }
        Ok(Config { sections })
    }

    pub fn load(path: &std::path::Path) -> Result<Config> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    pub fn has(&self, section: &str, key: &str) -> bool {
        self.sections.get(section).is_some_and(|s| s.contains_key(key))
    }

    pub fn raw(&self, section: &str, key: &str) -> Result<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Config(format!("missing [{section}] {key}")))
    }

    pub fn str_or<'a>(&'a self, section: &str, key: &str, default: &'a str) -> &'a str {
        self.raw(section, key).unwrap_or(default)
    }

    pub fn f64(&self, section: &str, key: &str) -> Result<f64> {
        let raw = self.raw(section, key)?;
        raw.parse().map_err(|_| Error::Config(format!("[{section}] {key}: bad float '{raw}'")))
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        if self.has(section, key) {
            self.f64(section, key)
        } else {
            Ok(default)
        }
    }

    pub fn u64(&self, section: &str, key: &str) -> Result<u64> {
        let raw = self.raw(section, key)?;
        raw.parse().map_err(|_| Error::Config(format!("[{section}] {key}: bad integer '{raw}'")))
    }

    pub fn u64_or(&self, section: &str, key: &str, default: u64) -> Result<u64> {
        if self.has(section, key) {
            self.u64(section, key)
        } else {
            Ok(default)
        }
    }

    pub fn usize(&self, section: &str, key: &str) -> Result<usize> {
        Ok(self.u64(section, key)? as usize)
    }

    pub fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        Ok(self.u64_or(section, key, default as u64)? as usize)
    }

    pub fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        if !self.has(section, key) {
            return Ok(default);
        }
        match self.raw(section, key)? {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(Error::Config(format!("[{section}] {key}: bad bool '{other}'"))),
        }
    }

    pub fn f64_list(&self, section: &str, key: &str) -> Result<Vec<f64>> {
        let raw = self.raw(section, key)?;
        raw.split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("[{section}] {key}: bad float '{p}'")))
            })
            .collect()
    }

    pub fn usize_list(&self, section: &str, key: &str) -> Result<Vec<usize>> {
        let raw = self.raw(section, key)?;
        raw.split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("[{section}] {key}: bad integer '{p}'")))
            })
            .collect()
    }

    pub fn u64_list(&self, section: &str, key: &str) -> Result<Vec<u64>> {
        let raw = self.raw(section, key)?;
        raw.split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("[{section}] {key}: bad integer '{p}'")))
            })
            .collect()
    }
}
