//! Flat `key = value` scenario files with `[section]` headers.
//!
//! Keys before the first header are top-level; later keys are addressed as
//! `section.key`. `#` starts a comment. Every key must be consumed by the
//! scenario builder, so typos surface as errors with their line number.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.msg),
            None => write!(f, "{}", self.msg),
        }
    }
}

impl ConfigError {
    pub fn new(line: Option<usize>, msg: impl Into<String>) -> Self {
        Self { line, msg: msg.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    /// `None` for values set on the command line.
    line: Option<usize>,
}

#[derive(Debug, Default)]
pub struct Config {
    entries: BTreeMap<String, Entry>,
    used: RefCell<BTreeSet<String>>,
    /// Defaults that were applied, by key.
    defaults: RefCell<BTreeMap<String, String>>,
}

impl Clone for Config {
    fn clone(&self) -> Self {
        Self {
            entries: self.entries.clone(),
            used: RefCell::new(BTreeSet::new()),
            defaults: RefCell::new(BTreeMap::new()),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(rest) = body.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::new(Some(line), "section header is missing `]`"))?
                    .trim();
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                    return Err(ConfigError::new(Some(line), format!("bad section name `{name}`")));
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| ConfigError::new(Some(line), format!("expected `key = value`, got `{body}`")))?;
            let k = k.trim();
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(ConfigError::new(Some(line), format!("bad key `{k}`")));
            }
            let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            let entry = Entry { value: v.trim().to_string(), line: Some(line) };
            if let Some(prev) = entries.insert(key.clone(), entry) {
                return Err(ConfigError::new(
                    Some(line),
                    format!("`{key}` already set on line {}", prev.line.unwrap_or(0)),
                ));
            }
        }
        Ok(Self { entries, used: RefCell::new(BTreeSet::new()), defaults: RefCell::new(BTreeMap::new()) })
    }

    /// Overrides (or adds) a value, as the command line does.
    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), Entry { value: value.to_string(), line: None });
    }

    pub fn line(&self, key: &str) -> Option<usize> {
        self.entries.get(key).and_then(|e| e.line)
    }

    pub fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        let e = self.entries.get(key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(&e.value)
    }

    pub fn err(&self, key: &str, msg: impl fmt::Display) -> ConfigError {
        ConfigError::new(self.line(key), format!("`{key}`: {msg}"))
    }

    pub fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.raw(key).ok_or_else(|| ConfigError::new(None, format!("missing required key `{key}`")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.raw(key).map(|v| v.parse::<T>().map_err(|e| self.err(key, format!("cannot parse `{v}`: {e}")))).transpose()
    }

    pub fn get_or<T: FromStr + fmt::Display>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.get(key)? {
            Some(v) => Ok(v),
            None => {
                self.note_default(key, &default);
                Ok(default)
            }
        }
    }

    /// Records a default the caller applied, so the manifest can show it.
    pub fn note_default(&self, key: &str, value: &dyn fmt::Display) {
        self.defaults.borrow_mut().insert(key.to_string(), value.to_string());
    }

    /// Positive finite number.
    pub fn positive(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v: f64 = self.get_or(key, default)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(self.err(key, format!("must be positive, got {v}")));
        }
        Ok(v)
    }

    /// Comma- or space-separated numbers.
    pub fn list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        parse_list(v).map(Some).map_err(|e| self.err(key, e))
    }

    /// Rows separated by `;`.
    pub fn rows(&self, key: &str) -> Result<Option<Vec<Vec<f64>>>, ConfigError> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        v.split(';').map(parse_list).collect::<Result<Vec<_>, _>>().map(Some).map_err(|e| self.err(key, e))
    }

    /// Errors on the first key nobody asked for.
    pub fn check_unused(&self) -> Result<(), ConfigError> {
        let used = self.used.borrow();
        match self.entries.keys().find(|k| !used.contains(*k)) {
            Some(k) => Err(ConfigError::new(self.line(k), format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }

    /// Every entry as `key = value`, in key order.
    pub fn echo(&self) -> String {
        self.entries.iter().map(|(k, e)| format!("{k} = {}\n", e.value)).collect()
    }

    /// Defaults applied during the run, as `key = value` lines.
    pub fn echo_defaults(&self) -> String {
        self.defaults.borrow().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

pub fn parse_list(v: &str) -> Result<Vec<f64>, String> {
    v.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("`{s}` is not a number")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_lookup() {
        let c = Config::parse("mode = theorem1 # trailing\n\n[plant]\nx0 = 1, -2 3\na = 0 1; 0 0\n").unwrap();
        assert_eq!(c.raw("mode"), Some("theorem1"));
        assert_eq!(c.list("plant.x0").unwrap(), Some(vec![1.0, -2.0, 3.0]));
        assert_eq!(c.rows("plant.a").unwrap(), Some(vec![vec![0.0, 1.0], vec![0.0, 0.0]]));
        assert!(c.check_unused().is_ok());
    }

    #[test]
    fn errors_carry_lines() {
        assert_eq!(Config::parse("a = 1\nnonsense\n").unwrap_err().line, Some(2));
        assert_eq!(Config::parse("[x\n").unwrap_err().line, Some(1));
        assert_eq!(Config::parse("a = 1\na = 2\n").unwrap_err().line, Some(2));
        let c = Config::parse("\ndt = 0\n").unwrap();
        assert_eq!(c.positive("dt", 1e-3).unwrap_err().line, Some(2));
        let c = Config::parse("\n\ntypo = 1\n").unwrap();
        assert_eq!(c.check_unused().unwrap_err().line, Some(3));
    }

    #[test]
    fn overrides_replace_values() {
        let mut c = Config::parse("dt = 0.01\n").unwrap();
        c.set("dt", "0.002");
        assert_eq!(c.get::<f64>("dt").unwrap(), Some(0.002));
        assert_eq!(c.line("dt"), None);
    }

    #[test]
    fn applied_defaults_are_recorded() {
        let c = Config::parse("dt = 0.01\n").unwrap();
        c.positive("dt", 1e-3).unwrap();
        c.positive("horizon", 60.0).unwrap();
        assert_eq!(c.echo_defaults(), "horizon = 60\n");
    }
}
