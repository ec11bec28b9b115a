//! Flat key=value config files and the value parsers shared by the CLI.

use obsdn_core::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;

/// Parses noise levels given either as a fraction over 255 (`"25/255"`) or
/// as a plain decimal (`"0.1"`). The fraction form avoids decimal drift.
pub fn parse_level(s: &str) -> Result<f64> {
    let value = if let Some((num, den)) = s.split_once('/') {
        let n: f64 = num
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad level numerator in {s:?}")))?;
        let d: f64 = den
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad level denominator in {s:?}")))?;
        if d == 0.0 {
            return Err(Error::InvalidArgument(format!("zero denominator in {s:?}")));
        }
        n / d
    } else {
        s.trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad level {s:?}")))?
    };
    if !value.is_finite() || !(0.0..=1.0).contains(&value) {
        return Err(Error::InvalidArgument(format!(
            "level {s:?} must lie in [0, 1]"
        )));
    }
    Ok(value)
}

/// Key=value file: one pair per line, `#` starts a comment, blank lines are
/// ignored. Key validity is checked by the command that consumes the map.
pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{}:{}: expected key=value, got {raw:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Pulls config values by key, tracking which keys were consumed so the
/// caller can reject unknown ones.
pub struct ConfigSource {
    map: BTreeMap<String, String>,
    consumed: std::cell::RefCell<Vec<String>>,
}

impl ConfigSource {
    pub fn empty() -> Self {
        ConfigSource {
            map: BTreeMap::new(),
            consumed: std::cell::RefCell::new(Vec::new()),
        }
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        Ok(ConfigSource {
            map: match path {
                Some(p) => read_config(p)?,
                None => BTreeMap::new(),
            },
            consumed: std::cell::RefCell::new(Vec::new()),
        })
    }

    /// Raw string lookup; records the key as known.
    pub fn raw(&self, key: &str) -> Option<&str> {
        self.consumed.borrow_mut().push(key.to_string());
        self.map.get(key).map(|s| s.as_str())
    }

    /// Resolves `cli.or(config).unwrap_or(default)` for a parseable value.
    pub fn resolve<T: std::str::FromStr>(
        &self,
        cli: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T> {
        if let Some(v) = cli {
            self.raw(key); // mark as known even when overridden
            return Ok(v);
        }
        match self.raw(key) {
            Some(s) => s.parse().map_err(|_| {
                Error::InvalidArgument(format!("config key {key}: bad value {s:?}"))
            }),
            None => Ok(default),
        }
    }

    /// Like [`resolve`](Self::resolve) but for noise levels, accepting the
    /// `k/255` notation in both the CLI string and the config file.
    pub fn resolve_level(&self, cli: Option<&str>, key: &str, default: f64) -> Result<f64> {
        if let Some(s) = cli {
            self.raw(key);
            return parse_level(s);
        }
        match self.raw(key) {
            Some(s) => parse_level(s),
            None => Ok(default),
        }
    }

    /// Errors out if the file contained keys nobody consumed.
    pub fn reject_unknown(&self) -> Result<()> {
        let consumed = self.consumed.borrow();
        for key in self.map.keys() {
            if !consumed.iter().any(|c| c == key) {
                return Err(Error::InvalidArgument(format!(
                    "unknown config key {key:?}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fraction_and_decimal_levels() {
        assert!((parse_level("25/255").unwrap() - 25.0 / 255.0).abs() < 1e-15);
        assert!((parse_level("0.125").unwrap() - 0.125).abs() < 1e-15);
        assert!(parse_level("2.0").is_err());
        assert!(parse_level("abc").is_err());
        assert!(parse_level("1/0").is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let dir = std::env::temp_dir().join("obsdn-config-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.cfg");
        std::fs::write(&path, "alpha=1\nbogus=2\n").unwrap();
        let src = ConfigSource::load(Some(&path)).unwrap();
        let alpha: f64 = src.resolve(None, "alpha", 0.0).unwrap();
        assert_eq!(alpha, 1.0);
        let err = src.reject_unknown().unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }
}
