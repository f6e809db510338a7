use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use trimet::eval::Mode;
use trimet::{HierarchicalConfig, MiningStrategy, SolverConfig};

/// Run configuration read from `--config <file.json>`. Every key is
/// optional; command-line flags take precedence. Unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub strategy: Option<MiningStrategy>,
    pub strategies: Option<Vec<MiningStrategy>>,
    pub mode: Option<String>,
    pub k: Option<usize>,
    pub c: Option<f64>,
    pub k_values: Option<Vec<usize>>,
    pub c_values: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub lambda: Option<f64>,
    pub solver: Option<SolverConfig>,
    pub hierarchical: Option<HierarchicalConfig>,
    pub input: Option<PathBuf>,
    pub datasets: Option<Vec<String>>,
    pub has_header: Option<bool>,
    pub label_col: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub timing: Option<bool>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Modes named by `hier`, `nonhier` or `both`.
pub fn parse_modes(s: &str) -> Result<Vec<Mode>> {
    if s.eq_ignore_ascii_case("both") {
        return Ok(vec![Mode::NonHierarchical, Mode::Hierarchical]);
    }
    Ok(vec![s.parse::<Mode>()?])
}

pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| anyhow::anyhow!("bad {what} `{p}`: {e}")))
        .collect()
}

/// Fails unless `path` is an existing file.
pub fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("input file {} does not exist", path.display());
    }
    Ok(())
}

/// Creates `dir` if needed and checks it is a directory.
pub fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    Ok(())
}
