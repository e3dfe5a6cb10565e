//! Optional TOML configuration file. Every subcommand reads its own section
//! (`[simulate]`, `[train]`, ...); command-line flags override file values,
//! file values override built-in defaults. The layering is a pure function
//! of (file, flags), so identical inputs give identical runs.

use std::path::Path;

use anyhow::{bail, Context, Result};

#[derive(Default)]
pub struct FileConfig {
    table: toml::Table,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config file {}", p.display()))?;
                let table: toml::Table = text
                    .parse()
                    .with_context(|| format!("parsing config file {}", p.display()))?;
                Ok(FileConfig { table })
            }
        }
    }

    pub fn section(&self, name: &str) -> Section<'_> {
        Section {
            table: self.table.get(name).and_then(|v| v.as_table()),
            section: name.to_string(),
        }
    }
}

pub struct Section<'a> {
    table: Option<&'a toml::Table>,
    section: String,
}

impl Section<'_> {
    fn get(&self, key: &str) -> Option<&toml::Value> {
        self.table.and_then(|t| t.get(key))
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => match v.as_float().or_else(|| v.as_integer().map(|i| i as f64)) {
                Some(f) => Ok(Some(f)),
                None => bail!("[{}] {key} must be a number", self.section),
            },
        }
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => match v.as_integer() {
                Some(i) if i >= 0 => Ok(Some(i as u64)),
                _ => bail!("[{}] {key} must be a non-negative integer", self.section),
            },
        }
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => match v.as_bool() {
                Some(b) => Ok(Some(b)),
                None => bail!("[{}] {key} must be a boolean", self.section),
            },
        }
    }

    pub fn string(&self, key: &str) -> Result<Option<String>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => match v.as_str() {
                Some(s) => Ok(Some(s.to_string())),
                None => bail!("[{}] {key} must be a string", self.section),
            },
        }
    }
}

/// flag > config file > default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layering_prefers_flags_over_file_over_default() {
        assert_eq!(pick(Some(1), Some(2), 3), 1);
        assert_eq!(pick(None, Some(2), 3), 2);
        assert_eq!(pick::<i32>(None, None, 3), 3);
    }

    #[test]
    fn sections_read_typed_values() {
        let cfg = FileConfig {
            table: "[train]\nepochs = 40\nlr = 0.01\nnormalize = false\nfeatures = \"torque\""
                .parse()
                .unwrap(),
        };
        let s = cfg.section("train");
        assert_eq!(s.usize("epochs").unwrap(), Some(40));
        assert_eq!(s.f64("lr").unwrap(), Some(0.01));
        assert_eq!(s.bool("normalize").unwrap(), Some(false));
        assert_eq!(s.string("features").unwrap(), Some("torque".into()));
        assert_eq!(s.f64("missing").unwrap(), None);
        assert!(s.bool("epochs").is_err());
    }
}
