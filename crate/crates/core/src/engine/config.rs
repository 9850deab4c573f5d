//! Run configuration as read from a TOML file by the command-line tool.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::reward::RewardParams;
use crate::controller::ControllerConfig;
use crate::error::SearchError;
use crate::oracle::SurrogateParams;
use crate::space::SpaceSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    ReinforcedEa,
    RandomEa,
    RandomSearch,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::ReinforcedEa => "reinforced_ea",
            Self::RandomEa => "random_ea",
            Self::RandomSearch => "random_search",
        }
    }
}

pub const DEFAULT_BUDGET: u64 = 500;
pub const DEFAULT_TIMEOUT_SECS: u64 = 3600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleConfig {
    Surrogate {
        /// Replaces the default per-depth weights when present.
        #[serde(default)]
        params: Option<SurrogateParams<f64>>,
        #[serde(default)]
        noise_sigma: f64,
    },
    External {
        command: String,
        #[serde(default = "default_budget")]
        budget: u64,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_budget() -> u64 {
    DEFAULT_BUDGET
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self::Surrogate { params: None, noise_sigma: 0.0 }
    }
}

/// Everything the search loop itself needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSettings {
    pub algorithm: Algorithm,
    /// Total models explored, initial population included.
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub reward: RewardParams<f64>,
    /// Initial members must satisfy `latency <= relax * T`.
    pub relax: f64,
    pub seed: u64,
    pub max_init_attempts: u64,
    /// Permit a mutation to redraw the gene's current value.
    pub allow_noop_mutation: bool,
    /// Exhaustive mode for tiny spaces. Initial members are distinct, a
    /// mutation landing on an explored config is redrawn up to
    /// `max_skip_attempts` times, and if every redraw is explored the child
    /// becomes the nearest unexplored config (no mutator update follows).
    pub skip_seen: bool,
    pub max_skip_attempts: usize,
    pub controller: ControllerConfig,
}

impl SearchSettings {
    pub fn new(algorithm: Algorithm, target_latency_us: f64, seed: u64) -> Self {
        Self {
            algorithm,
            n: 500,
            p: 50,
            s: 50,
            reward: RewardParams::new(target_latency_us, -1.0),
            relax: 1.15,
            seed,
            max_init_attempts: 1_000_000,
            allow_noop_mutation: true,
            skip_seen: false,
            max_skip_attempts: 100,
            controller: ControllerConfig::default(),
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = self.reward.problems();
        if self.p == 0 {
            out.push("P must be at least 1".into());
        }
        if self.s == 0 {
            out.push("S must be at least 1".into());
        }
        if self.n < self.p {
            out.push(format!("N ({}) must be at least P ({})", self.n, self.p));
        }
        if !(self.relax >= 1.0 && self.relax.is_finite()) {
            out.push(format!("relax must be a finite factor >= 1, got {}", self.relax));
        }
        if self.max_init_attempts == 0 {
            out.push("max_init_attempts must be positive".into());
        }
        if self.skip_seen && self.max_skip_attempts == 0 {
            out.push("max_skip_attempts must be positive when skip_seen is set".into());
        }
        if let Err(e) = self.controller.validate() {
            out.push(format!("controller: {e}"));
        }
        out
    }
}

/// On-disk run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    #[serde(rename = "N", alias = "n", default = "default_n")]
    pub n: usize,
    #[serde(rename = "P", alias = "p", default = "default_ps")]
    pub p: usize,
    #[serde(rename = "S", alias = "s", default = "default_ps")]
    pub s: usize,
    pub target_latency_us: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_relax")]
    pub relax: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub space: SpaceSpec,
    #[serde(default)]
    pub oracle: OracleConfig,
    /// Trained predictor file. Relative paths resolve against the config file.
    pub latency_model: PathBuf,
    pub output_dir: PathBuf,
    /// Memoize oracle results by configuration.
    #[serde(default = "yes")]
    pub cache: bool,
    #[serde(default = "yes")]
    pub allow_noop_mutation: bool,
    #[serde(default)]
    pub skip_seen: bool,
    #[serde(default = "default_skip_attempts")]
    pub max_skip_attempts: usize,
    #[serde(default = "default_init_attempts")]
    pub max_init_attempts: u64,
    #[serde(default)]
    pub controller: ControllerConfig,
}

fn default_n() -> usize {
    500
}
fn default_ps() -> usize {
    50
}
fn default_alpha() -> f64 {
    -1.0
}
fn default_relax() -> f64 {
    1.15
}
fn yes() -> bool {
    true
}
fn default_skip_attempts() -> usize {
    100
}
fn default_init_attempts() -> u64 {
    1_000_000
}

impl RunConfig {
    pub fn settings(&self) -> SearchSettings {
        SearchSettings {
            algorithm: self.algorithm,
            n: self.n,
            p: self.p,
            s: self.s,
            reward: RewardParams::new(self.target_latency_us, self.alpha),
            relax: self.relax,
            seed: self.seed,
            max_init_attempts: self.max_init_attempts,
            allow_noop_mutation: self.allow_noop_mutation && !self.controller.resample_until_different,
            skip_seen: self.skip_seen,
            max_skip_attempts: self.max_skip_attempts,
            controller: self.controller,
        }
    }

    /// Collects every problem rather than stopping at the first.
    pub fn validate(&self) -> Result<(), SearchError> {
        let mut out = self.settings().problems();
        if let Err(e) = self.space.validate() {
            out.push(format!("space: {e}"));
        }
        match &self.oracle {
            OracleConfig::Surrogate { params, noise_sigma } => {
                if !(*noise_sigma >= 0.0 && noise_sigma.is_finite()) {
                    out.push(format!("oracle.noise_sigma must be nonnegative, got {noise_sigma}"));
                }
                if params.is_some() && *noise_sigma != 0.0 {
                    out.push("oracle.noise_sigma conflicts with oracle.params; set noise inside params".into());
                }
                if let (Some(p), Ok(())) = (params, self.space.validate()) {
                    if let Err(e) = p.validate(&self.space) {
                        out.push(format!("oracle.params: {e}"));
                    }
                }
            }
            OracleConfig::External { command, timeout_secs, .. } => {
                if command.trim().is_empty() {
                    out.push("oracle.command is empty".into());
                }
                if *timeout_secs == 0 {
                    out.push("oracle.timeout_secs must be positive".into());
                }
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            out.push("output_dir is empty".into());
        }
        if self.latency_model.as_os_str().is_empty() {
            out.push("latency_model is empty".into());
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(SearchError::InvalidConfig(out))
        }
    }
}
