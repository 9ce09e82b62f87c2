use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::Context;

use super::{CliError, CliResult};

/// A `key = value` settings file. Blank lines and `#` comments are
/// ignored; keys use the long flag names (`learning-rate`, with `_`
/// accepted for `-`). Keys a subcommand does not know are ignored, so one
/// file can serve several subcommands.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    source: Option<PathBuf>,
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('_', "-")
}

impl ConfigFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", n + 1)))?;
            let key = normalize(k);
            if key.is_empty() {
                return Err(CliError::Usage(format!("config line {}: empty key", n + 1)));
            }
            let v = v.trim();
            let v = v
                .strip_prefix('"')
                .and_then(|s| s.strip_suffix('"'))
                .unwrap_or(v);
            values.insert(key, v.to_owned());
        }
        Ok(ConfigFile { values, source: None })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let mut c = Self::parse(&text)?;
        c.source = Some(path.to_owned());
        Ok(c)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize(key)).map(String::as_str)
    }

    /// Typed lookup; a present but unparsable value is a usage error.
    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| {
                let src = self
                    .source
                    .as_deref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| "config".into());
                CliError::Usage(format!("{src}: invalid value `{v}` for `{key}`: {e}"))
            }),
        }
    }

    /// Flag (or environment) value if given, else the file value, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.pick_opt(flag, key)?.unwrap_or(default))
    }

    pub fn pick_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_layers() {
        let c = ConfigFile::parse("# comment\nepochs = 5\nlearning_rate=0.01\n\nout-dir = \"runs/a\"\n").unwrap();
        assert_eq!(c.get::<u64>("epochs").unwrap(), Some(5));
        assert_eq!(c.get::<f64>("learning-rate").unwrap(), Some(0.01));
        assert_eq!(c.raw("out-dir"), Some("runs/a"));
        assert_eq!(c.pick(Some(9u64), "epochs", 100).unwrap(), 9);
        assert_eq!(c.pick(None, "epochs", 100u64).unwrap(), 5);
        assert_eq!(c.pick(None, "batch-size", 128u64).unwrap(), 128);
    }

    #[test]
    fn bad_lines_and_values_are_usage_errors() {
        assert!(matches!(ConfigFile::parse("epochs"), Err(CliError::Usage(_))));
        assert!(matches!(ConfigFile::parse(" = 3"), Err(CliError::Usage(_))));
        let c = ConfigFile::parse("epochs = many").unwrap();
        assert!(matches!(c.get::<u64>("epochs"), Err(CliError::Usage(_))));
    }
}
