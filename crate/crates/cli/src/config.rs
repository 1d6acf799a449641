//! Flat `key = value` configuration merged with command-line flags.

use crate::CliError;
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

/// Merged configuration of one run; flags override the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_file(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", n + 1)))?;
        let key = key.trim().replace('-', "_");
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", n + 1)));
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(CliError::Usage(format!("config line {}: duplicate key {key}", n + 1)));
        }
    }
    Ok(out)
}

impl RunConfig {
    /// Merges an optional config file with flags, rejecting keys outside `allowed`.
    pub fn merge(
        file: Option<&Path>,
        flags: Vec<(&'static str, Option<String>)>,
        allowed: &[&str],
    ) -> Result<RunConfig, CliError> {
        let mut values = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                parse_file(&text)?
            }
            None => BTreeMap::new(),
        };
        if let Some(key) = values.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(CliError::Usage(format!("unknown config key `{key}` (allowed: {})", allowed.join(", "))));
        }
        for (key, value) in flags {
            if let Some(v) = value {
                values.insert(key.to_string(), v);
            }
        }
        Ok(RunConfig { values })
    }

    pub fn from_pairs<I: IntoIterator<Item = (String, String)>>(pairs: I) -> RunConfig {
        RunConfig { values: pairs.into_iter().collect() }
    }

    pub fn echo(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|_| CliError::Usage(format!("invalid value `{v}` for `{key}`"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.get(key)?.ok_or_else(|| CliError::Usage(format!("missing required `{key}`")))
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        self.get_or(key, false)
    }

    /// Comma-separated list of numbers.
    pub fn list(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|s| {
                        s.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("invalid number `{s}` in `{key}`")))
                    })
                    .collect()
            })
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_dashes() {
        let map = parse_file("# header\nell-max = 4  # inline\n\ndim=7\n").unwrap();
        assert_eq!(map.get("ell_max").map(String::as_str), Some("4"));
        assert_eq!(map.get("dim").map(String::as_str), Some("7"));
    }

    #[test]
    fn duplicate_and_malformed_lines_fail() {
        assert!(parse_file("dim = 7\ndim = 8").is_err());
        assert!(parse_file("dim 7").is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let dir = std::env::temp_dir().join(format!("conelab-config-{}", std::process::id()));
        std::fs::write(&dir, "dim = 9\nell_max = 3\n").unwrap();
        let cfg =
            RunConfig::merge(Some(&dir), vec![("dim", Some("7".into())), ("out", None)], &["dim", "ell_max", "out"])
                .unwrap();
        std::fs::remove_file(&dir).ok();
        assert_eq!(cfg.require::<u32>("dim").unwrap(), 7);
        assert_eq!(cfg.require::<u32>("ell_max").unwrap(), 3);
        assert!(cfg.raw("out").is_none());
    }
}
