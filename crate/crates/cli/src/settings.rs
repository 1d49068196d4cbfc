//! Flag, config-file and default resolution.
//!
//! Precedence is flag, then config file, then built-in default. The config
//! file is flat `key = value` text; keys are flag names with `_` for `-`.
//! `PREFOPT_SEED`, when set, wins over everything for `seed`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

pub const SEED_ENV: &str = "PREFOPT_SEED";

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut file = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::usage(format!(
                    "config line {}: expected key = value",
                    i + 1
                )));
            };
            let key = k.trim().replace('-', "_");
            if key.is_empty() {
                return Err(CliError::usage(format!("config line {}: empty key", i + 1)));
            }
            if file.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(CliError::usage(format!(
                    "config line {}: duplicate key '{key}'",
                    i + 1
                )));
            }
        }
        Ok(Self {
            file,
            ..Self::default()
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    fn file_value<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::usage(format!("config key {key} = '{v}': {e}"))),
        }
    }

    /// Flag value, else config value, else `default`; records the outcome.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => {
                self.used.insert(key.to_string());
                v
            }
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// Like [`Settings::get`] without a default.
    pub fn require<T>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => {
                self.used.insert(key.to_string());
                Some(v)
            }
            None => self.file_value(key)?,
        };
        let value =
            value.ok_or_else(|| CliError::usage(format!("missing --{}", key.replace('_', "-"))))?;
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// Optional value with no default; recorded as empty when absent.
    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => {
                self.used.insert(key.to_string());
                Some(v)
            }
            None => self.file_value(key)?,
        };
        self.resolved.insert(
            key.to_string(),
            value.as_ref().map(|v| v.to_string()).unwrap_or_default(),
        );
        Ok(value)
    }

    pub fn seed(&mut self, flag: Option<u64>) -> Result<u64, CliError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v
                .trim()
                .parse()
                .map_err(|e| CliError::usage(format!("{SEED_ENV}='{v}': {e}")))?;
            self.used.insert("seed".into());
            self.resolved.insert("seed".into(), format!("{seed}"));
            return Ok(seed);
        }
        self.get("seed", flag, 0)
    }

    /// Fails on config keys that no lookup asked for.
    pub fn finish(&self) -> Result<(), CliError> {
        match self.file.keys().find(|k| !self.used.contains(*k)) {
            Some(k) => Err(CliError::usage(format!("unknown config key '{k}'"))),
            None => Ok(()),
        }
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }
}

/// Comma-separated list, parsed element-wise.
pub fn parse_list<T: FromStr>(text: &str) -> Result<Vec<T>, CliError>
where
    T::Err: Display,
{
    let items: Result<Vec<T>, CliError> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|e| CliError::usage(format!("'{s}': {e}")))
        })
        .collect();
    let items = items?;
    if items.is_empty() {
        return Err(CliError::usage("empty list"));
    }
    Ok(items)
}
