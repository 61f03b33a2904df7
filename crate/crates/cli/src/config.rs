//! Flat `key = value` configuration.
//!
//! ```text
//! # comments run to end of line
//! learning_rate = 0.05
//! epochs = 10
//! ```
//!
//! Every command declares its keys with defaults. A file given with
//! `--config` overrides defaults, `--set key=value` overrides the file and
//! `--seed` overrides everything. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected `key = value`", n + 1))?;
        let k = k.trim();
        if k.is_empty() {
            bail!("config line {}: empty key", n + 1);
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_set(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("--set expects key=value, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl Config {
    pub fn resolve(
        defaults: &[(&str, &str)],
        file: Option<&Path>,
        sets: &[(String, String)],
        seed: Option<u64>,
    ) -> Result<Self> {
        let mut cfg = Config {
            values: defaults.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            for (k, v) in parse_config_text(&text).with_context(|| path.display().to_string())? {
                cfg.put(&k, v)?;
            }
        }
        for (k, v) in sets {
            cfg.put(k, v.clone())?;
        }
        if let Some(s) = seed {
            cfg.put("seed", s.to_string())?;
        }
        Ok(cfg)
    }

    /// Rebuilds a config from a manifest snapshot; the snapshot must cover exactly the declared keys.
    pub fn from_snapshot(defaults: &[(&str, &str)], snapshot: &BTreeMap<String, String>) -> Result<Self> {
        let declared: Vec<&str> = defaults.iter().map(|(k, _)| *k).collect();
        for k in snapshot.keys() {
            if !declared.contains(&k.as_str()) {
                bail!("manifest has unknown config key `{k}`");
            }
        }
        for k in &declared {
            if !snapshot.contains_key(*k) {
                bail!("manifest is missing config key `{k}`");
            }
        }
        Ok(Config {
            values: snapshot.clone(),
        })
    }

    fn put(&mut self, key: &str, value: String) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => {
                let known: Vec<&str> = self.values.keys().map(String::as_str).collect();
                bail!("unknown config key `{key}`; known keys: {}", known.join(", "))
            }
        }
    }

    pub fn get<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self
            .values
            .get(key)
            .ok_or_else(|| anyhow!("config key `{key}` is not declared for this command"))?;
        raw.parse::<T>()
            .map_err(|e| anyhow!("config key `{key}` = `{raw}`: {e}"))
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| anyhow!("config key `{key}` is not declared for this command"))
    }

    pub fn snapshot(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}
