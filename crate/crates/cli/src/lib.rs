//! Front end for the `vagg` binary: configuration files, CSV reports and
//! parallel seed sweeps.

pub mod commands;
pub mod config;

use std::ops::RangeInclusive;

use thiserror::Error;
use vagg_core::sim::SimError;

pub use config::{load_config, parse_config, render_defaults, ConfigError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Config(ConfigError::Invalid(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

/// Parses `a..b` (inclusive) or a single number.
pub fn parse_range(s: &str) -> Result<RangeInclusive<usize>, String> {
    let bad = || format!("`{s}` is not a range like 2..70");
    match s.split_once("..") {
        Some((a, b)) => {
            let b = b.strip_prefix('=').unwrap_or(b);
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            Ok(a..=b)
        }
        None => {
            let v: usize = s.trim().parse().map_err(|_| bad())?;
            Ok(v..=v)
        }
    }
}

/// Parses a comma-separated list such as `6,10`.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("`{p}` is not a number")))
        .collect()
}
