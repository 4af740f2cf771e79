//! Optional JSON config file and the environment seed.
//!
//! Every value resolves as flag, then config file, then (for seeds)
//! `BATCHSTATE_SEED`, then the built-in default.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::cli::MethodArg;
use crate::error::CliError;

pub const SEED_ENV: &str = "BATCHSTATE_SEED";

#[derive(Deserialize, Default, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub simulate: SimulateConfig,
    pub estimate: EstimateConfig,
    pub ex1: Ex1Config,
    pub ex2: Ex2Config,
    pub ex3: Ex3Config,
}

#[derive(Deserialize, Default, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: Option<PathBuf>,
    pub example2: Option<bool>,
    pub x1: Option<Vec<f64>>,
    pub sigma_nu: Option<f64>,
    pub sigma_mu: Option<f64>,
    #[serde(rename = "N")]
    pub horizon: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Deserialize, Default, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub method: Option<MethodArg>,
    pub rho: Option<f64>,
    pub model: Option<PathBuf>,
    pub example2: Option<bool>,
    pub y: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Deserialize, Default, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct Ex1Config {
    pub rhos: Option<Vec<f64>>,
    #[serde(rename = "N")]
    pub horizon: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Deserialize, Default, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct Ex2Config {
    pub sigma_nu: Option<Vec<f64>>,
    pub grid_n: Option<Vec<usize>>,
    pub trials: Option<usize>,
    pub rho: Option<f64>,
    pub master_seed: Option<u64>,
    pub matrix: Option<bool>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Deserialize, Default, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct Ex3Config {
    pub sigmas: Option<Vec<f64>>,
    pub trials: Option<usize>,
    #[serde(rename = "N")]
    pub horizon: Option<usize>,
    pub master_seed: Option<u64>,
    pub rho: Option<f64>,
    pub lambda: Option<f64>,
    pub eta: Option<f64>,
    pub max_iters: Option<usize>,
    pub save_fits: Option<bool>,
    pub out_dir: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

/// `BATCHSTATE_SEED`, if set.
pub fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))
        }),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Usage(format!("{SEED_ENV}: {e}"))),
    }
}

pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    Ok(env_seed()?.unwrap_or(0))
}
