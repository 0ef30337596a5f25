//! Flat `key = value` run configuration.
//!
//! Values are resolved from command defaults, then an optional config file,
//! then `--set key=value` overrides, then dedicated flags. Unknown keys are
//! rejected at every stage.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};

use crate::UsageError;

/// A key a command understands, with its default. `None` marks a key that
/// must be supplied.
pub type KeySpec = (&'static str, Option<&'static str>);

#[derive(Clone, Debug)]
pub struct Settings {
    command: &'static str,
    keys: &'static [KeySpec],
    values: BTreeMap<&'static str, String>,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(UsageError(format!("{}:{}: expected `key = value`", origin.display(), i + 1)).into());
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl Settings {
    pub fn new(command: &'static str, keys: &'static [KeySpec]) -> Self {
        let values = keys
            .iter()
            .filter_map(|&(k, d)| d.map(|d| (k, d.to_string())))
            .collect();
        Self { command, keys, values }
    }

    /// Applies defaults, then `file`, then `overrides` (`key=value`).
    pub fn resolve(
        command: &'static str,
        keys: &'static [KeySpec],
        file: Option<&Path>,
        overrides: &[String],
    ) -> Result<Self> {
        let mut s = Self::new(command, keys);
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            for (k, v) in parse_config(&text, path)? {
                s.set(&k, v)?;
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| UsageError(format!("--set expects key=value, got {o:?}")))?;
            s.set(k.trim(), v.trim().to_string())?;
        }
        Ok(s)
    }

    pub fn set(&mut self, key: &str, value: String) -> Result<()> {
        let Some(&(k, _)) = self.keys.iter().find(|(k, _)| *k == key) else {
            let known: Vec<&str> = self.keys.iter().map(|(k, _)| *k).collect();
            return Err(UsageError(format!(
                "unknown {} key {key:?} (known: {})",
                self.command,
                known.join(", ")
            ))
            .into());
        };
        self.values.insert(k, value);
        Ok(())
    }

    pub fn set_opt(&mut self, key: &str, value: Option<impl ToString>) -> Result<()> {
        match value {
            Some(v) => self.set(key, v.to_string()),
            None => Ok(()),
        }
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| UsageError(format!("{} needs `{key}`", self.command)).into())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|e| UsageError(format!("bad value for {key}: {raw:?} ({e})")).into())
    }

    pub fn optional(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    /// Fails unless every key without a default has been supplied.
    pub fn check_required(&self) -> Result<()> {
        for (k, d) in self.keys {
            if d.is_none() && !self.values.contains_key(k) {
                return Err(UsageError(format!("{} needs `{k}`", self.command)).into());
            }
        }
        Ok(())
    }

    /// Every resolved key in declaration order.
    pub fn to_text(&self) -> String {
        let mut out = format!("# resolved {} configuration\n", self.command);
        for (k, _) in self.keys {
            if let Some(v) = self.values.get(k) {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }
}

/// Parses `5,10,20`.
pub fn parse_ks(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|k| {
            k.trim()
                .parse::<usize>()
                .map_err(|_| UsageError(format!("bad cutoff {k:?} in {s:?}")).into())
        })
        .collect()
}
