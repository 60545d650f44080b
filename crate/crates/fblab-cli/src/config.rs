//! Flat key-value scenario configs with `[section]` headers: diffable,
//! hand-editable experiment records. One scenario per file.

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type SectionMap = BTreeMap<String, BTreeMap<String, String>>;

/// Raw parsed config plus the original text (echoed into the run directory).
#[derive(Clone, Debug)]
pub struct RawConfig {
    pub text: String,
    sections: SectionMap,
}

pub fn parse(text: &str) -> Result<RawConfig, ConfigError> {
    let mut sections: SectionMap = BTreeMap::new();
    let mut current = String::new();
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = match raw_line.find('#') {
            Some(idx) => &raw_line[..idx],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| ConfigError(format!("line {}: unterminated section header", lineno + 1)))?
                .trim();
            if name.is_empty() {
                return Err(ConfigError(format!("line {}: empty section name", lineno + 1)));
            }
            current = name.to_string();
            sections.entry(current.clone()).or_default();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("line {}: expected key = value", lineno + 1)))?;
        if current.is_empty() {
            return Err(ConfigError(format!("line {}: key outside any [section]", lineno + 1)));
        }
        let prev = sections
            .get_mut(&current)
            .expect("section exists")
            .insert(key.trim().to_string(), value.trim().to_string());
        if prev.is_some() {
            return Err(ConfigError(format!(
                "line {}: duplicate key {:?} in [{current}]",
                lineno + 1,
                key.trim()
            )));
        }
    }
    Ok(RawConfig { text: text.to_string(), sections })
}

impl RawConfig {
    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section).and_then(|s| s.get(key)).map(String::as_str)
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str, ConfigError> {
        self.get(section, key)
            .ok_or_else(|| ConfigError(format!("missing key {key:?} in section [{section}]")))
    }

    pub fn f64(&self, section: &str, key: &str) -> Result<f64, ConfigError> {
        self.require(section, key)?
            .parse()
            .map_err(|e| ConfigError(format!("[{section}] {key}: not a number ({e})")))
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| ConfigError(format!("[{section}] {key}: not a number ({e})"))),
        }
    }

    pub fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| ConfigError(format!("[{section}] {key}: not an integer ({e})"))),
        }
    }

    pub fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(section, key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(ConfigError(format!("[{section}] {key}: expected true/false, got {v:?}"))),
        }
    }

    pub fn list_f64(&self, section: &str, key: &str) -> Result<Vec<f64>, ConfigError> {
        self.require(section, key)?
            .split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|e| ConfigError(format!("[{section}] {key}: bad list entry ({e})")))
            })
            .collect()
    }

    pub fn list_f64_or(
        &self,
        section: &str,
        key: &str,
        default: &[f64],
    ) -> Result<Vec<f64>, ConfigError> {
        if self.get(section, key).is_none() {
            return Ok(default.to_vec());
        }
        self.list_f64(section, key)
    }

    pub fn point_or(
        &self,
        section: &str,
        key: &str,
        default: [f64; 3],
    ) -> Result<[f64; 3], ConfigError> {
        if self.get(section, key).is_none() {
            return Ok(default);
        }
        let list = self.list_f64(section, key)?;
        if list.is_empty() || list.len() > 3 {
            return Err(ConfigError(format!("[{section}] {key}: expected 2 or 3 coordinates")));
        }
        let mut p = [0.0; 3];
        p[..list.len()].copy_from_slice(&list);
        Ok(p)
    }
}
