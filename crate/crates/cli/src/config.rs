//! Flat `key=value` configs, flag/config/default resolution, and run manifests.
//!
//! A manifest is itself a config file: feeding it back through `--config`
//! re-runs the command with the same resolved values.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::CliError;

pub const MANIFEST_VERSION: &str = concat!("featgen ", env!("CARGO_PKG_VERSION"), " manifest v1");

/// Parses `key=value` lines. Blank lines and lines starting with `#` are
/// skipped; a repeated key is an error.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!("config line {}: expected key=value, got `{line}`", i + 1)));
        };
        let k = k.trim().to_string();
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Usage(format!("config line {}: duplicate key `{k}`", i + 1)));
        }
    }
    Ok(out)
}

/// Resolves each setting as flag > config file > default and remembers the
/// result for the manifest.
pub struct Resolver {
    command: &'static str,
    config: BTreeMap<String, String>,
    resolved: Vec<(&'static str, String)>,
}

impl Resolver {
    pub fn new(command: &'static str, config_path: Option<&Path>) -> Result<Self, CliError> {
        let mut config = match config_path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        if let Some(c) = config.remove("command") {
            if c != command {
                return Err(CliError::Usage(format!("config is for `{c}`, not `{command}`")));
            }
        }
        Ok(Self {
            command,
            config,
            resolved: Vec::new(),
        })
    }

    fn take_config<T: FromStr>(&mut self, key: &'static str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match self.config.remove(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key `{key}`: {e}"))),
        }
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &'static str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let configured = self.take_config(key)?;
        let v = flag.or(configured).unwrap_or(default);
        self.resolved.push((key, v.to_string()));
        Ok(v)
    }

    pub fn optional_path(&mut self, key: &'static str, flag: Option<PathBuf>) -> Result<Option<PathBuf>, CliError> {
        let configured: Option<PathBuf> = self.take_config(key)?;
        let v = flag.or(configured);
        if let Some(p) = &v {
            self.resolved.push((key, p.display().to_string()));
        }
        Ok(v)
    }

    pub fn path_or(&mut self, key: &'static str, flag: Option<PathBuf>, default: &str) -> Result<PathBuf, CliError> {
        let configured: Option<PathBuf> = self.take_config(key)?;
        let v = flag.or(configured).unwrap_or_else(|| PathBuf::from(default));
        self.resolved.push((key, v.display().to_string()));
        Ok(v)
    }

    pub fn path(&mut self, key: &'static str, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
        self.optional_path(key, flag)?
            .ok_or_else(|| CliError::Usage(format!("`--{key}` is required")))
    }

    /// Comma-separated list; a non-empty flag list wins over the config.
    pub fn list<T: FromStr + Display>(&mut self, key: &'static str, flag: Vec<T>, default: Vec<T>) -> Result<Vec<T>, CliError>
    where
        T::Err: Display,
    {
        let configured = match self.config.remove(key) {
            None => None,
            Some(raw) => Some(
                raw.split(',')
                    .map(|s| s.trim().parse().map_err(|e| CliError::Usage(format!("config key `{key}`: {e}"))))
                    .collect::<Result<Vec<T>, _>>()?,
            ),
        };
        let v = if !flag.is_empty() { flag } else { configured.unwrap_or(default) };
        if v.is_empty() {
            return Err(CliError::Usage(format!("`{key}` must list at least one value")));
        }
        let joined = v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        self.resolved.push((key, joined));
        Ok(v)
    }

    /// Rejects config keys nothing asked for, which are almost always typos.
    pub fn finish(self) -> Result<Manifest, CliError> {
        if let Some(k) = self.config.keys().next() {
            return Err(CliError::Usage(format!("unknown config key `{k}` for `{}`", self.command)));
        }
        Ok(Manifest {
            command: self.command,
            values: self.resolved,
            outputs: Vec::new(),
        })
    }
}

pub struct Manifest {
    command: &'static str,
    values: Vec<(&'static str, String)>,
    outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn add_output(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    /// Writes `<out_dir>/<command>.manifest`. Run metadata goes in comment
    /// lines so the file can be passed straight back to `--config`.
    pub fn write(&self, out_dir: &Path, elapsed: Duration) -> Result<PathBuf, CliError> {
        let mut s = format!("# {MANIFEST_VERSION}\n# wall_clock_seconds: {:.3}\n", elapsed.as_secs_f64());
        for o in &self.outputs {
            s.push_str(&format!("# output: {}\n", o.display()));
        }
        s.push_str(&format!("command={}\n", self.command));
        for (k, v) in &self.values {
            s.push_str(&format!("{k}={v}\n"));
        }
        let path = out_dir.join(format!("{}.manifest", self.command));
        fs::write(&path, s)?;
        Ok(path)
    }
}
