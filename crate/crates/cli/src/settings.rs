//! Layered `key=value` settings: defaults, then a TOML config file, then
//! explicit flags and `--set` overrides.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn new<I, K, V>(defaults: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: ToString,
    {
        Settings {
            values: defaults.into_iter().map(|(k, v)| (k.into(), v.to_string())).collect(),
        }
    }

    /// Flattens a serializable value into dotted keys; arrays become
    /// comma-separated lists.
    pub fn from_serialize<T: Serialize>(value: &T, skip: &[&str]) -> Self {
        fn walk(prefix: &str, v: &serde_json::Value, out: &mut BTreeMap<String, String>) {
            match v {
                serde_json::Value::Object(map) => {
                    for (k, v) in map {
                        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                        walk(&key, v, out);
                    }
                }
                serde_json::Value::Array(items) => {
                    let text: Vec<String> = items.iter().map(scalar).collect();
                    out.insert(prefix.to_string(), text.join(","));
                }
                other => {
                    out.insert(prefix.to_string(), scalar(other));
                }
            }
        }
        fn scalar(v: &serde_json::Value) -> String {
            match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            }
        }
        let mut values = BTreeMap::new();
        walk("", &serde_json::to_value(value).expect("settings serialize"), &mut values);
        for s in skip {
            values.remove(*s);
        }
        Settings { values }
    }

    /// Adds or replaces a default.
    pub fn insert(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => bail!(
                "unknown setting {key:?}; known settings: {}",
                self.values.keys().cloned().collect::<Vec<_>>().join(", ")
            ),
        }
    }

    pub fn set_opt<T: ToString>(&mut self, key: &str, value: Option<T>) -> Result<()> {
        match value {
            Some(v) => self.set(key, &v.to_string()),
            None => Ok(()),
        }
    }

    /// Applies a TOML file; nested tables map to dotted keys.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let table: toml::Table =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let mut flat = Vec::new();
        flatten_toml("", &toml::Value::Table(table), &mut flat);
        for (k, v) in flat {
            self.set(&k, &v).with_context(|| format!("in config {}", path.display()))?;
        }
        Ok(())
    }

    /// Applies `key=value` pairs.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<()> {
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects key=value, got {pair:?}"))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self
            .values
            .get(key)
            .ok_or_else(|| anyhow!("missing setting {key}"))?;
        raw.parse()
            .map_err(|e| anyhow!("setting {key}={raw:?}: {e}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &String)> {
        self.values.iter()
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

fn flatten_toml(prefix: &str, v: &toml::Value, out: &mut Vec<(String, String)>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_toml(&key, v, out);
            }
        }
        toml::Value::String(s) => out.push((prefix.to_string(), s.clone())),
        toml::Value::Array(items) => {
            let parts: Vec<String> = items
                .iter()
                .map(|i| match i {
                    toml::Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect();
            out.push((prefix.to_string(), parts.join(",")));
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// The resolved configuration of one run, written as `run.config`.
#[derive(Debug, Serialize)]
pub struct RunConfig<'a> {
    pub command: &'a str,
    pub seed: u64,
    pub paths: BTreeMap<String, String>,
    pub settings: &'a BTreeMap<String, String>,
}

impl RunConfig<'_> {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).context("serializing run.config")?;
        let path = dir.join("run.config");
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
