use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

/// Settings read from `--config`. Relative paths resolve against the file's
/// directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub manifest: Option<PathBuf>,
    pub kg: Option<PathBuf>,
    pub learned: Option<PathBuf>,
    pub core: Option<PathBuf>,
    pub thresholds: Option<PathBuf>,
    pub quantile: Option<f64>,
    pub seed: Option<u64>,
    pub scope: Option<String>,
    pub strategy: Option<String>,
    pub cc: Option<String>,
    pub hops: Option<u32>,
    pub relations: Option<Vec<String>>,
    pub fuzzy_floor: Option<f64>,
    pub top_k: Option<usize>,
    pub grid_step: Option<f64>,
    pub clusters: Option<Vec<usize>>,
    pub disable_k: Option<usize>,
    pub threads: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: FileConfig = toml::from_str(&text)
            .map_err(|e| CliError::input(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.manifest,
            &mut cfg.kg,
            &mut cfg.learned,
            &mut cfg.core,
            &mut cfg.thresholds,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Flag, else config file, else default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Flag, else config file, else a missing-input error naming the flag.
pub fn require<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T, CliError> {
    flag.or(file)
        .ok_or_else(|| CliError::input(format!("--{name} is required (flag or config file)")))
}
