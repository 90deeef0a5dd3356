//! `key = value` run configuration files.
//!
//! Keys use the long flag names (`lr`, `per-class`, `pool-labels`, ...);
//! underscores are accepted in place of hyphens. Blank lines and lines
//! starting with `#` are ignored. A value given on the command line always
//! wins over the file, and the file wins over built-in defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::CliError;

/// Every key a configuration file may set.
pub const KEYS: &[&str] = &[
    "seed",
    "threads",
    // data
    "data",
    "pool",
    "pool-labels",
    "test",
    "test-labels",
    "class-emb",
    "labelled",
    "out",
    "head",
    // synthetic benchmark
    "classes",
    "dim",
    "per-class",
    "sigma",
    "miscal",
    "min-angle",
    // sampling
    "budget",
    "q",
    "strategy",
    "cluster-algo",
    "max-iter",
    "restarts",
    // pseudo-labelling and training
    "p",
    "tau",
    "lambda",
    "top-k",
    "temperature",
    "sessions",
    "epochs",
    "lr",
    "batch",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    source: Option<PathBuf>,
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, Some(path))
    }

    pub fn parse(text: &str, source: Option<&Path>) -> Result<Self, CliError> {
        let origin = source.map_or_else(|| "config".to_string(), |p| p.display().to_string());
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "{origin}:{}: expected key = value",
                    n + 1
                )));
            };
            let key = key.trim().replace('_', "-");
            if !KEYS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!("{origin}:{}: unknown key {key:?}", n + 1)));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(CliError::Usage(format!("{origin}:{}: duplicate key {key:?}", n + 1)));
            }
        }
        Ok(Self {
            source: source.map(Path::to_path_buf),
            values,
        })
    }

    /// The raw file value for `key`, if set.
    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn from_file<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse().map_err(|e| {
                    CliError::Usage(format!("config key {key} = {v:?}: {e}"))
                })
            })
            .transpose()
    }

    /// Flag value, else file value, else `default`.
    pub fn pick<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.pick_opt(key, flag)?.unwrap_or(default))
    }

    /// Flag value, else file value.
    pub fn pick_opt<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.from_file(key),
        }
    }

    /// Like [`Settings::pick_opt`] for paths. Relative paths in a config
    /// file are resolved against the file's directory.
    pub fn path(&self, key: &str, flag: Option<PathBuf>) -> Option<PathBuf> {
        flag.or_else(|| {
            let value = PathBuf::from(self.raw(key)?);
            let base = self.source.as_deref().and_then(Path::parent);
            Some(match base {
                Some(dir) if value.is_relative() => dir.join(value),
                _ => value,
            })
        })
    }
}
