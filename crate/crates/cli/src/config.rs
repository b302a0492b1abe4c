//! Flat key=value run configuration.
//!
//! Syntax, intentionally boring and stable:
//!
//! ```text
//! # comment
//! t-steps = 100
//! fit.max-iters = 4000      # scoped: applies to the `fit` subcommand only
//! ```
//!
//! One `key = value` pair per line; `#` starts a comment; blank lines are
//! ignored. Keys use the same kebab-case names as the CLI flags. A key may
//! be scoped to one subcommand with a `<command>.` prefix, which takes
//! precedence over the unscoped key. Command-line flags override both.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use symcorr::{Error, Result};

#[derive(Debug, Default)]
pub struct Config {
    entries: HashMap<String, String>,
}

impl Config {
    /// Load a config file, or produce an empty config when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::InvalidArgument(format!("--config {}: {e}", p.display()))
                })?;
                Self::parse(&text, &p.display().to_string())
            }
        }
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "{origin}:{}: expected `key = value`, got `{line}`",
                    idx + 1
                ))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "{origin}:{}: empty key",
                    idx + 1
                )));
            }
            entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self { entries })
    }

    /// `<cmd>.<key>` beats `<key>`; absent keys fall through to the caller's
    /// default.
    pub fn lookup(&self, cmd: &str, key: &str) -> Option<&str> {
        self.entries
            .get(&format!("{cmd}.{key}"))
            .or_else(|| self.entries.get(key))
            .map(String::as_str)
    }
}

/// Config access scoped to one subcommand, merging the three layers
/// (flag > config > default) with typed parsing and named-field errors.
pub struct Scope<'a> {
    cfg: &'a Config,
    cmd: &'static str,
}

impl<'a> Scope<'a> {
    pub fn new(cfg: &'a Config, cmd: &'static str) -> Self {
        Self { cfg, cmd }
    }

    fn parse_as<T: std::str::FromStr>(&self, key: &str, raw: &str) -> Result<T> {
        raw.parse().map_err(|_| {
            Error::InvalidArgument(format!(
                "{key}: cannot parse `{raw}` as {}",
                std::any::type_name::<T>()
            ))
        })
    }

    pub fn f64(&self, key: &str, flag: Option<f64>, default: f64) -> Result<f64> {
        match (flag, self.cfg.lookup(self.cmd, key)) {
            (Some(v), _) => Ok(v),
            (None, Some(raw)) => self.parse_as(key, raw),
            (None, None) => Ok(default),
        }
    }

    pub fn usize(&self, key: &str, flag: Option<usize>, default: usize) -> Result<usize> {
        match (flag, self.cfg.lookup(self.cmd, key)) {
            (Some(v), _) => Ok(v),
            (None, Some(raw)) => self.parse_as(key, raw),
            (None, None) => Ok(default),
        }
    }

    pub fn u64(&self, key: &str, flag: Option<u64>, default: u64) -> Result<u64> {
        match (flag, self.cfg.lookup(self.cmd, key)) {
            (Some(v), _) => Ok(v),
            (None, Some(raw)) => self.parse_as(key, raw),
            (None, None) => Ok(default),
        }
    }

    /// Like [`Scope::u64`] but with no default: absent everywhere → `None`.
    pub fn opt_u64(&self, key: &str, flag: Option<u64>) -> Result<Option<u64>> {
        match (flag, self.cfg.lookup(self.cmd, key)) {
            (Some(v), _) => Ok(Some(v)),
            (None, Some(raw)) => self.parse_as(key, raw).map(Some),
            (None, None) => Ok(None),
        }
    }

    pub fn string(&self, key: &str, flag: Option<&str>, default: &str) -> String {
        flag.map(str::to_string)
            .or_else(|| self.cfg.lookup(self.cmd, key).map(str::to_string))
            .unwrap_or_else(|| default.to_string())
    }

    /// Path-valued setting with no default: `None` means "not provided".
    pub fn opt_path(&self, key: &str, flag: Option<&Path>) -> Option<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.cfg.lookup(self.cmd, key).map(PathBuf::from))
    }

    /// Path-valued setting that must be provided by flag or config.
    pub fn required_path(&self, key: &str, flag: Option<&Path>) -> Result<PathBuf> {
        self.opt_path(key, flag).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{key}: required (pass --{key} or set `{key}` in the config file)"
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_scoping_comments_and_blanks() {
        let cfg = Config::parse(
            "# header\nt-steps = 50\nfit.t-steps = 75 # scoped\n\nlr=0.5\n",
            "test",
        )
        .unwrap();
        assert_eq!(cfg.lookup("fit", "t-steps"), Some("75"));
        assert_eq!(cfg.lookup("schedule", "t-steps"), Some("50"));
        assert_eq!(cfg.lookup("fit", "lr"), Some("0.5"));
        assert_eq!(cfg.lookup("fit", "missing"), None);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(Config::parse("just words\n", "t").is_err());
        assert!(Config::parse("= value\n", "t").is_err());
    }

    #[test]
    fn precedence_is_flag_config_default() {
        let cfg = Config::parse("lr = 0.25\n", "t").unwrap();
        let scope = Scope::new(&cfg, "fit");
        assert_eq!(scope.f64("lr", Some(0.5), 0.1).unwrap(), 0.5);
        assert_eq!(scope.f64("lr", None, 0.1).unwrap(), 0.25);
        assert_eq!(scope.f64("other", None, 0.1).unwrap(), 0.1);
        assert!(scope.usize("lr", None, 1).is_err());
    }
}
