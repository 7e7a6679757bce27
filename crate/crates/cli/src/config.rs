//! `key=value` config files merged under command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use anyhow::Context;

use crate::UsageError;

/// Resolved settings: explicit flags win over file values, which win over defaults.
#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut file = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(UsageError(format!(
                    "{}:{}: expected key=value",
                    path.display(),
                    i + 1
                ))
                .into());
            };
            file.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self {
            file,
            resolved: BTreeMap::new(),
        })
    }

    /// Value for `key` from the flag, then the file, then `default`.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> anyhow::Result<T>
    where
        T: FromStr + ToString,
    {
        let value = match (flag, self.file.get(key)) {
            (Some(v), _) => v,
            (None, Some(raw)) => raw
                .parse()
                .map_err(|_| UsageError(format!("config key `{key}`: cannot parse `{raw}`")))?,
            (None, None) => default,
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// Keys present in the file that no command consumed.
    pub fn unknown_keys(&self) -> Vec<&str> {
        self.file
            .keys()
            .filter(|k| !self.resolved.contains_key(*k))
            .map(String::as_str)
            .collect()
    }

    pub fn record(&mut self, key: &str, value: impl ToString) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.resolved {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn echo(&self, out_dir: &Path) -> anyhow::Result<()> {
        let path = out_dir.join("config.txt");
        std::fs::write(&path, self.to_text()).with_context(|| format!("writing {}", path.display()))
    }
}
