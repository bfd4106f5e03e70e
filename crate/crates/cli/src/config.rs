//! `key = value` configuration files and flag/file/default resolution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::CliError;

pub const OUT_DIR_ENV: &str = "CPLS_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "cpls-out";

/// Parsed `key = value` lines. Blank lines and `#` comments are skipped;
/// keys accept `-` or `_` interchangeably.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value, got '{raw}'", no + 1)))?;
            entries.insert(normalize(key), value.trim().to_string());
        }
        Ok(ConfigFile { entries })
    }

    /// Fails on keys not in `known`, so typos do not pass silently.
    pub fn check_keys(&self, known: &[&str]) -> Result<(), CliError> {
        match self.entries.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(CliError::Usage(format!("unknown config key '{k}'"))),
            None => Ok(()),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.entries
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::Usage(format!("config key '{key}': {e}")))
            })
            .transpose()
    }
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('_', "-")
}

/// Flag, then config file, then default.
pub fn resolve<T: FromStr>(flag: Option<T>, file: &ConfigFile, key: &str, default: T) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    match flag {
        Some(v) => Ok(v),
        None => Ok(file.get(key)?.unwrap_or(default)),
    }
}

/// Flag, then config file, then `$CPLS_OUT_DIR`, then `cpls-out`.
pub fn resolve_out_dir(flag: Option<PathBuf>, file: &ConfigFile) -> Result<PathBuf, CliError> {
    if let Some(p) = flag {
        return Ok(p);
    }
    if let Some(p) = file.get::<PathBuf>("out-dir")? {
        return Ok(p);
    }
    Ok(std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)))
}
