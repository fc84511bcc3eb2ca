//! Run configuration: JSON schema, validation, and the echo that makes
//! every output directory self-describing.
//!
//! Parsing is strict (unknown fields rejected at every level) and every
//! field has a default, so `{}` is a complete toy-scale config and a file
//! can override any subset. Validation never touches the filesystem;
//! the CLI only creates output files after a config has passed here.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chainworld::{EnvConfig, EnvError, EnvParams};
use crate::net::NetworkConfig;
use crate::ppo::{PpoConfig, PpoConfigError};
use crate::stagger::{build_schedule, Mode, ScheduleError};

fn default_horizon() -> u32 {
    200
}
fn default_block_length() -> u32 {
    5
}
fn default_num_actions() -> usize {
    20
}
fn default_reward_correct() -> f64 {
    0.5
}
fn default_reward_incorrect() -> f64 {
    -0.5
}
fn default_progression_prob() -> f64 {
    0.1
}
fn default_mastery_threshold() -> u32 {
    3
}

/// Chain-world settings. Defaults are the skill-gated demonstration
/// configuration: H=200, L=5, p=0.1, k=3, deterministic resets.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EnvSettings {
    #[serde(rename = "horizon_H", default = "default_horizon")]
    pub horizon: u32,
    #[serde(rename = "block_length_L", default = "default_block_length")]
    pub block_length: u32,
    /// Redundant with H/L; when present it must agree.
    #[serde(rename = "num_blocks_B", default)]
    pub num_blocks: Option<u32>,
    #[serde(rename = "num_actions_Ac", default = "default_num_actions")]
    pub num_actions: usize,
    #[serde(default = "default_reward_correct")]
    pub reward_correct: f64,
    #[serde(default = "default_reward_incorrect")]
    pub reward_incorrect: f64,
    #[serde(rename = "progression_prob_p", default = "default_progression_prob")]
    pub progression_prob: f64,
    #[serde(rename = "mastery_threshold_k", default = "default_mastery_threshold")]
    pub mastery_threshold: u32,
    #[serde(default)]
    pub reset_lambda: f64,
    /// Fixed target actions; omitted means: sample from the run seed.
    #[serde(default)]
    pub target_actions: Option<Vec<usize>>,
}

impl Default for EnvSettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl EnvSettings {
    pub fn params(&self) -> EnvParams {
        EnvParams {
            horizon: self.horizon,
            block_length: self.block_length,
            num_actions: self.num_actions,
            reward_correct: self.reward_correct,
            reward_incorrect: self.reward_incorrect,
            progression_prob: self.progression_prob,
            mastery_threshold: self.mastery_threshold,
            reset_lambda: self.reset_lambda,
        }
    }
}

fn default_embed_dim() -> usize {
    64
}
fn default_hidden_dim() -> usize {
    256
}
fn default_hidden_layers() -> usize {
    4
}
fn default_separate_value_net() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NetSettings {
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
    /// Defaults to true: sharing the trunk lets the persistent value error
    /// (remaining time is unobservable from the block index) churn policy
    /// features on every update, visibly slowing and destabilizing learning.
    #[serde(default = "default_separate_value_net")]
    pub separate_value_net: bool,
    /// Embedding rows; omitted means: exactly the env's block count.
    /// Sweeps set this to the largest block count in the grid so one
    /// architecture serves every point.
    #[serde(default)]
    pub embed_rows: Option<usize>,
}

impl Default for NetSettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSettings {
    #[serde(default)]
    pub mode: Mode,
    /// Group count override; omitted means ceil(H/K) in staggered mode.
    #[serde(rename = "num_groups_NB", default)]
    pub num_groups: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct MetricsSettings {
    /// EMA weight for rolling accuracy; omitted means raw per-batch.
    #[serde(default)]
    pub rolling_ema_alpha: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub env: EnvSettings,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub net: NetSettings,
    #[serde(default)]
    pub schedule: ScheduleSettings,
    #[serde(default)]
    pub metrics: MetricsSettings,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; the CLI's --out flag takes precedence.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("env: {0}")]
    Env(#[from] EnvError),
    #[error("ppo: {0}")]
    Ppo(#[from] PpoConfigError),
    #[error("schedule: {0}")]
    Schedule(#[from] ScheduleError),
    #[error("num_blocks_B = {given} but horizon_H / block_length_L = {computed}")]
    NumBlocksMismatch { given: u32, computed: u32 },
    #[error("net.embed_rows = {rows} cannot cover {blocks} blocks")]
    EmbedRowsTooSmall { rows: usize, blocks: usize },
    #[error("net.{name} must be positive")]
    NetZeroDim { name: &'static str },
    #[error("metrics.rolling_ema_alpha = {0} outside [0, 1]")]
    BadEmaAlpha(f64),
}

impl RunConfig {
    /// Full validation: every section, plus the cross-section facts the
    /// runner relies on (schedule feasibility, embedding coverage).
    pub fn validate(&self) -> Result<(), ConfigError> {
        // Materializing the env runs the full parameter validation; targets
        // sampled from a throwaway seed are discarded.
        let env = self.build_env(self.seed)?;
        self.ppo.validate()?;

        if let Some(given) = self.env.num_blocks {
            if given != env.num_blocks {
                return Err(ConfigError::NumBlocksMismatch { given, computed: env.num_blocks });
            }
        }

        for (name, dim) in [
            ("embed_dim", self.net.embed_dim),
            ("hidden_dim", self.net.hidden_dim),
            ("hidden_layers", self.net.hidden_layers),
        ] {
            if dim == 0 {
                return Err(ConfigError::NetZeroDim { name });
            }
        }
        let blocks = env.num_blocks as usize;
        let rows = self.net.embed_rows.unwrap_or(blocks);
        if rows < blocks {
            return Err(ConfigError::EmbedRowsTooSmall { rows, blocks });
        }

        build_schedule(
            self.ppo.num_envs,
            self.env.horizon,
            self.ppo.rollout_len as u32,
            self.schedule.num_groups.map(|g| g as u32),
            self.schedule.mode,
        )?;

        if let Some(alpha) = self.metrics.rolling_ema_alpha {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(ConfigError::BadEmaAlpha(alpha));
            }
        }
        Ok(())
    }

    /// Materializes the env for a seed: explicit target actions when given,
    /// else sampled from the seed's dedicated stream.
    pub fn build_env(&self, seed: u64) -> Result<EnvConfig, ConfigError> {
        let params = self.env.params();
        Ok(match &self.env.target_actions {
            Some(targets) => EnvConfig::new(params, targets.clone())?,
            None => EnvConfig::with_seeded_targets(params, seed)?,
        })
    }

    /// Network architecture for a given env (embedding rows default to the
    /// block count).
    pub fn build_net_config(&self, env: &EnvConfig) -> NetworkConfig {
        NetworkConfig {
            embed_rows: self.net.embed_rows.unwrap_or(env.num_blocks as usize),
            embed_dim: self.net.embed_dim,
            hidden_dim: self.net.hidden_dim,
            hidden_layers: self.net.hidden_layers,
            num_actions: env.num_actions,
            separate_value_net: self.net.separate_value_net,
        }
    }

    /// The config echo: pretty JSON with every default filled in.
    pub fn echo_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses and validates a config from JSON text.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let config: RunConfig = serde_json::from_str(text)?;
    config.validate()?;
    Ok(config)
}

/// Reads, parses, and validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    parse_config(&std::fs::read_to_string(path)?)
}
