//! Flat TOML experiment configuration.

use std::fmt;
use std::path::Path;

use powerctl::threshold::Pairing;
use powerctl::{Measure, ModelParams};
use serde::Deserialize;

/// Malformed or unreadable configuration.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluidPolicyKind {
    Threshold,
    Passive,
    Active,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub theta: f64,
    pub beta1: f64,
    pub lambda: f64,
    pub n0: f64,
    pub p_max: f64,
    #[serde(default = "default_q_max")]
    pub q_max: usize,
    pub rho: f64,
    #[serde(default = "default_n_users")]
    pub n_users: usize,
    #[serde(default = "default_rho_sweep")]
    pub rho_sweep: Vec<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    pub m0: Option<Vec<f64>>,
    #[serde(default = "default_fluid_policy")]
    pub fluid_policy: FluidPolicyKind,
    #[serde(default)]
    pub pairing: Pairing,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    #[serde(default = "default_check_horizon")]
    pub check_horizon: f64,
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default = "default_vi_tol")]
    pub vi_tol: f64,
}

fn default_q_max() -> usize {
    1
}
fn default_n_users() -> usize {
    10
}
fn default_rho_sweep() -> Vec<f64> {
    vec![0.05, 0.1, 0.2, 0.3]
}
fn default_dt() -> f64 {
    powerctl::fluid::DEFAULT_DT
}
fn default_horizon() -> f64 {
    100.0
}
fn default_fluid_policy() -> FluidPolicyKind {
    FluidPolicyKind::Threshold
}
fn default_grid_step() -> f64 {
    0.005
}
fn default_check_horizon() -> f64 {
    1e4
}
fn default_starts() -> usize {
    5
}
fn default_vi_tol() -> f64 {
    powerctl::finite::DEFAULT_VI_TOL
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(format!("invalid config: {e}")))
    }

    /// Validated model parameters at arrival rate `rho`.
    pub fn params_at(&self, rho: f64) -> powerctl::Result<ModelParams> {
        let mut p =
            ModelParams::two_state(self.theta, self.beta1, rho, self.lambda, self.n0, self.p_max);
        p.q_max = self.q_max;
        p.validate()
    }

    pub fn params(&self) -> powerctl::Result<ModelParams> {
        self.params_at(self.rho)
    }

    pub fn initial_measure(&self) -> powerctl::Result<Option<Measure>> {
        self.m0.clone().map(Measure::new).transpose()
    }
}
