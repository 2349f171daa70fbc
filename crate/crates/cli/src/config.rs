//! Run configuration: a plain `key = value` text file, parsed and validated
//! in full before any compute starts. Unknown and duplicate keys are errors,
//! not warnings — a typo'd hyperparameter must never silently fall back to a
//! default. Relative paths resolve against the config file's directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone)]
pub struct RunConfig {
    entries: Vec<(String, String)>,
    dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, dir)
    }

    pub fn parse(text: &str, dir: PathBuf) -> Result<Self, ConfigError> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected `key = value`", no + 1)))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError(format!("line {}: empty key", no + 1)));
            }
            if entries.iter().any(|(k, _)| *k == key) {
                return Err(ConfigError(format!("line {}: duplicate key {key:?}", no + 1)));
            }
            entries.push((key, value));
        }
        Ok(RunConfig { entries, dir })
    }

    /// Reject any key outside `allowed`. Call once per command with the
    /// command's full key set.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        for (k, _) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(ConfigError(format!("unknown key {k:?}")));
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key)
            .ok_or_else(|| ConfigError(format!("missing required key {key:?}")))
    }

    /// Typed lookup; absent key is `None`, unparsable value is an error.
    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| ConfigError(format!("key {key:?}: bad value {v:?}"))),
        }
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.parse_opt(key)?.unwrap_or(default))
    }

    /// `true`/`false` only.
    pub fn flag_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(ConfigError(format!("key {key:?}: expected true/false, got {v:?}"))),
        }
    }

    /// Path value resolved against the config file's directory.
    pub fn path(&self, key: &str) -> Result<PathBuf, ConfigError> {
        Ok(self.dir.join(self.require(key)?))
    }

    pub fn path_opt(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(|v| self.dir.join(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::parse(text, PathBuf::from("/cfg"))
    }

    #[test]
    fn parses_keys_comments_and_paths() {
        let c = parse("a = 1\n# note\nlr = 0.5  # inline\nout = model.bin\n").unwrap();
        let lr: f64 = c.parse_or("lr", 0.0).unwrap();
        assert_eq!(lr, 0.5);
        assert_eq!(c.parse_or("missing", 7usize).unwrap(), 7);
        assert_eq!(c.path("out").unwrap(), PathBuf::from("/cfg/model.bin"));
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        let c = parse("a = 1\nb = 2\n").unwrap();
        assert!(c.check_keys(&["a"]).is_err());
        assert!(c.check_keys(&["a", "b"]).is_ok());
        assert!(parse("a = 1\na = 2\n").is_err());
        assert!(parse("just words\n").is_err());
        let bad = parse("n = x\n").unwrap();
        assert!(bad.parse_opt::<usize>("n").is_err());
        assert!(bad.flag_or("n", false).is_err());
    }
}
