//! Flat `key = value` configuration with `#` comments.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, Result};

/// Keys are consumed as they are read, so leftovers can be reported as
/// unknown.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("config line {}: expected key=value, got {raw:?}", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(CliError::usage(format!("config line {}: empty key", n + 1)));
            }
            entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `key=value` overrides on top of the file contents.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o.split_once('=').ok_or_else(|| CliError::usage(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v.trim());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn take_str(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| CliError::usage(format!("{key}={v}: {e}"))),
        }
    }

    pub fn take_or<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn take_list<T>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => parse_list(&v).map(Some).map_err(|e| CliError::usage(format!("{key}: {e}"))),
        }
    }

    /// Errors if any key was never read.
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let keys: Vec<&str> = self.entries.keys().map(String::as_str).collect();
        Err(CliError::usage(format!("unknown config keys: {}", keys.join(", "))))
    }
}

pub fn parse_list<T>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T: FromStr,
    T::Err: Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|e| format!("{p:?}: {e}")))
        .collect()
}

/// Rows separated by `;`, entries by `,`.
pub fn parse_matrix(s: &str) -> std::result::Result<Vec<Vec<f64>>, String> {
    s.split(';').map(str::trim).filter(|r| !r.is_empty()).map(parse_list).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut c = KvConfig::parse("# header\nepochs = 10\n\nlr=0.01 # trailing\nhidden = 8, 8\n").unwrap();
        c.apply_overrides(&["epochs=20"]).unwrap();
        assert_eq!(c.take::<usize>("epochs").unwrap(), Some(20));
        assert_eq!(c.take_or("lr", 1.0).unwrap(), 0.01);
        assert_eq!(c.take_list::<usize>("hidden").unwrap(), Some(vec![8, 8]));
        assert_eq!(c.take::<usize>("missing").unwrap(), None);
        c.finish().unwrap();
    }

    #[test]
    fn reports_bad_lines_and_unknown_keys() {
        assert!(KvConfig::parse("novalue\n").is_err());
        assert!(KvConfig::parse("=3\n").is_err());
        let mut c = KvConfig::parse("a=x\nb=1\n").unwrap();
        assert!(c.take::<u32>("a").is_err());
        let err = c.finish().unwrap_err().to_string();
        assert!(err.contains('b'), "{err}");
    }

    #[test]
    fn matrices() {
        assert_eq!(parse_matrix("1.5,0; -1.5,0").unwrap(), vec![vec![1.5, 0.0], vec![-1.5, 0.0]]);
        assert!(parse_matrix("1,a").is_err());
    }
}
