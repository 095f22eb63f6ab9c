//! Flat `key = value` configuration files.
//!
//! ```text
//! # comments and blank lines are ignored
//! seed = 7
//! encoder.dim = 32
//! train.tau = 0.05
//! ```
//!
//! Command-line flags take precedence over file values, which take
//! precedence over built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{AppError, Result};

pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "encoder.dim",
    "encoder.vocab_size",
    "encoder.input_dim",
    "encoder.mask_mode",
    "encoder.seed",
    "lora.r",
    "lora.alpha",
    "fusion",
    "combiner",
    "similarity",
    "k",
    "settings",
    "train.tau",
    "train.lr",
    "train.epochs",
    "train.batch_size",
    "train.in_batch_negatives",
    "train.k_negatives",
    "train.threshold",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| AppError::parse(origin, i + 1, "expected `key = value`"))?;
            let (k, v) = (k.trim(), v.trim());
            if !KNOWN_KEYS.contains(&k) {
                return Err(AppError::parse(origin, i + 1, format!("unknown key {k:?}")));
            }
            if values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(AppError::parse(origin, i + 1, format!("duplicate key {k:?}")));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn get_raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get_raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| AppError::Validation(format!("config key {key}: {e}")))
            })
            .transpose()
    }

    /// `flag`, else the file value, else `default`.
    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }
}
