//! `key = value` config files layered under command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::CliError;

/// Every key a config file may set, across all subcommands.
const KNOWN_KEYS: &[&str] = &[
    "opset",
    "dist",
    "count",
    "seed",
    "intervals",
    "samples",
    "profile-seed",
    "noise",
    "ground-states",
    "data",
    "out",
    "hidden",
    "activation",
    "batch-size",
    "epochs",
    "lr",
    "final-lr-fraction",
    "loss",
    "init-seed",
    "shuffle-seed",
    "holdout",
    "checkpoint",
    "checkpoint-every",
    "resume",
    "model",
    "beta-max",
    "train-seed",
    "per-interval",
    "group",
    "metric",
    "csv",
    "solvers",
    "error-bound",
    "max-sweeps",
    "damping",
    "qbm-lr",
    "qbm-iterations",
    "fd-step",
    "states",
    "workers",
];

/// Resolves each setting as flag, else config file, else default, and
/// remembers the outcome for the run snapshot.
#[derive(Debug, Default)]
pub struct Resolver {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", idx + 1)))?;
        let key = k.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!("config line {}: unknown key {key:?}", idx + 1)));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

impl Resolver {
    pub fn new(config: Option<&Path>) -> Result<Self, CliError> {
        let file = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            file,
            resolved: BTreeMap::new(),
        })
    }

    fn from_file<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        self.file
            .get(key)
            .map(|raw| {
                raw.parse::<T>()
                    .map_err(|e| CliError::Usage(format!("config key {key}: {e}")))
            })
            .transpose()
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    pub fn opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        if let Some(v) = &value {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    pub fn required<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        self.opt(key, flag)?
            .ok_or_else(|| CliError::Usage(format!("missing required setting --{key}")))
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>, CliError> {
        Ok(self.opt(key, flag.map(|p| p.display().to_string()))?.map(PathBuf::from))
    }

    pub fn required_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
        self.path(key, flag)?
            .ok_or_else(|| CliError::Usage(format!("missing required setting --{key}")))
    }

    /// Resolved settings in config-file syntax.
    pub fn snapshot(&self) -> String {
        self.resolved.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Writes the snapshot to `<output>.run.cfg`.
    pub fn write_snapshot(&self, output: &Path) -> Result<PathBuf, CliError> {
        let path = sibling(output, "run.cfg");
        std::fs::write(&path, self.snapshot()).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

/// `out.json` -> `out.<suffix>`; `out` -> `out.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Fails early if `path` could not be written.
pub fn check_writable(path: &Path) -> Result<(), CliError> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let meta = std::fs::metadata(parent).map_err(|e| CliError::io(parent, e))?;
    if !meta.is_dir() || meta.permissions().readonly() {
        return Err(CliError::io(
            parent,
            std::io::Error::new(std::io::ErrorKind::PermissionDenied, "output directory is not writable"),
        ));
    }
    if path.is_dir() {
        return Err(CliError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::IsADirectory, "output path is a directory"),
        ));
    }
    Ok(())
}
