//! Flag and config-file resolution.
//!
//! Every option can come from a flag or from a `key=value` config file
//! named by `--config`; the flag wins. Pair-valued keys hold two
//! whitespace-separated integers (`k = 384 384`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use tlc::manifest::read_key_values;
use tlc::WindowSpec;

use crate::error::CliError;

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// Input tensor (`TLCT`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Local window size.
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    pub k: Option<Vec<usize>>,
    /// Tile stride.
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    pub stride: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `key=value` file with defaults for any option.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use the direct per-window loops instead of summed-area tables.
    #[arg(long)]
    pub brute_force: bool,
}

pub const DEFAULT_WINDOW: (usize, usize) = (384, 384);

/// Resolved view over flags plus config file.
pub struct Settings {
    file: BTreeMap<String, String>,
    pub common: CommonArgs,
}

fn pair(key: &str, v: &[usize]) -> Result<(usize, usize), CliError> {
    match v {
        [a, b] => Ok((*a, *b)),
        _ => Err(CliError::usage(format!("--{key} takes two integers"))),
    }
}

fn parse_pair(key: &str, raw: &str) -> Result<(usize, usize), CliError> {
    let nums: Vec<usize> = raw
        .split(|c: char| c.is_whitespace() || c == ',' || c == 'x')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::usage(format!("{key}: expected two integers, got {raw:?}")))?;
    pair(key, &nums)
}

impl Settings {
    pub fn load(common: CommonArgs) -> Result<Self, CliError> {
        let file = match &common.config {
            Some(path) => {
                if !path.is_file() {
                    return Err(CliError::io(format!("config file {} not found", path.display())));
                }
                read_key_values(path).map_err(CliError::from)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self { file, common })
    }

    /// Flag value, else config value, parsed as `T`.
    pub fn value<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        self.file
            .get(key)
            .map(|raw| {
                raw.parse()
                    .map_err(|_| CliError::usage(format!("config {key}: cannot parse {raw:?}")))
            })
            .transpose()
    }

    pub fn pair(&self, flag: Option<&Vec<usize>>, key: &str) -> Result<Option<(usize, usize)>, CliError> {
        if let Some(v) = flag {
            return pair(key, v).map(Some);
        }
        self.file.get(key).map(|raw| parse_pair(key, raw)).transpose()
    }

    pub fn flag_set(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        if flag {
            return Ok(true);
        }
        Ok(self.value::<bool>(None, key)?.unwrap_or(false))
    }

    pub fn window_or(&self, default: (usize, usize)) -> Result<WindowSpec, CliError> {
        let (h, w) = self.pair(self.common.k.as_ref(), "k")?.unwrap_or(default);
        WindowSpec::new(h, w).map_err(|e| CliError::usage(e.to_string()))
    }

    pub fn window(&self) -> Result<WindowSpec, CliError> {
        self.window_or(DEFAULT_WINDOW)
    }

    pub fn stride(&self) -> Result<Option<(usize, usize)>, CliError> {
        self.pair(self.common.stride.as_ref(), "stride")
    }

    pub fn seed(&self, default: u64) -> Result<u64, CliError> {
        Ok(self.value(self.common.seed, "seed")?.unwrap_or(default))
    }

    pub fn brute_force(&self) -> Result<bool, CliError> {
        self.flag_set(self.common.brute_force, "brute-force")
    }

    pub fn input(&self) -> Result<PathBuf, CliError> {
        let path = self
            .value(self.common.input.clone(), "input")?
            .ok_or_else(|| CliError::usage("--input is required"))?;
        if !path.is_file() {
            return Err(CliError::io(format!("input {} not found", path.display())));
        }
        Ok(path)
    }

    /// Output directory, created on demand.
    pub fn output(&self) -> Result<PathBuf, CliError> {
        let dir: PathBuf = self
            .value(self.common.output.clone(), "output")?
            .ok_or_else(|| CliError::usage("--output is required"))?;
        ensure_dir(&dir)?;
        Ok(dir)
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))
}
