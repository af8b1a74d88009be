//! Flag resolution: command line > `--config` JSON > built-in default.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

/// A loaded `--config` file: a flat JSON object keyed by flag name.
pub struct Overlay {
    values: Map<String, Value>,
    whence: String,
}

impl Overlay {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Overlay {
                values: Map::new(),
                whence: String::new(),
            });
        };
        let body = std::fs::read_to_string(path)
            .with_context(|| format!("read config {}", path.display()))?;
        let values: Value = serde_json::from_str(&body)
            .with_context(|| format!("parse config {}", path.display()))?;
        let Value::Object(values) = values else {
            bail!("config {} must be a flat JSON object", path.display());
        };
        for (key, value) in &values {
            if value.is_object() || value.is_array() {
                bail!(
                    "config {}: key {key:?} must be a scalar (flat key-value file)",
                    path.display()
                );
            }
        }
        Ok(Overlay {
            values,
            whence: path.display().to_string(),
        })
    }

    /// CLI value if given, else the config value under `key`, else `default`.
    pub fn get<T: DeserializeOwned>(&self, cli: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.lookup(cli, key)?.unwrap_or(default))
    }

    /// CLI value if given, else the config value; error when neither exists.
    pub fn require<T: DeserializeOwned>(&self, cli: Option<T>, key: &str) -> Result<T> {
        self.lookup(cli, key)?
            .with_context(|| format!("missing required flag --{}", key.replace('_', "-")))
    }

    /// CLI value if given, else the config value, else `None`.
    pub fn lookup_opt<T: DeserializeOwned>(&self, cli: Option<T>, key: &str) -> Result<Option<T>> {
        self.lookup(cli, key)
    }

    /// [`Self::lookup_opt`] specialized to paths, for optional file flags.
    pub fn lookup_path(&self, cli: Option<PathBuf>, key: &str) -> Result<Option<PathBuf>> {
        self.lookup(cli, key)
    }

    /// True when the boolean flag was set on the command line or in config.
    pub fn flag(&self, cli: bool, key: &str) -> Result<bool> {
        if cli {
            return Ok(true);
        }
        self.get(None, key, false)
    }

    fn lookup<T: DeserializeOwned>(&self, cli: Option<T>, key: &str) -> Result<Option<T>> {
        if cli.is_some() {
            return Ok(cli);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(value) => serde_json::from_value(value.clone())
                .map(Some)
                .with_context(|| format!("config {}: bad value for {key:?}", self.whence)),
        }
    }
}

/// Creates the output directory and returns a join helper that keeps every
/// artifact inside it.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&root)
            .with_context(|| format!("create output directory {}", root.display()))?;
        Ok(OutDir { root })
    }

    /// Path of an artifact inside the directory. `name` must be a bare file
    /// name so no output can escape the directory.
    pub fn path(&self, name: &str) -> PathBuf {
        assert!(
            !name.contains(['/', '\\']) && name != ".." && !name.is_empty(),
            "artifact name {name:?} must be a bare file name"
        );
        self.root.join(name)
    }

    pub fn display(&self) -> std::path::Display<'_> {
        self.root.display()
    }
}
