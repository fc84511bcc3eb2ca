//! Reset scheduling: offset-group construction and the reset-gate protocol.
//!
//! In `staggered` mode the N environments are split into `N_B` contiguous
//! groups; group `j` is pre-advanced by `j * S` steps (S = rollout length K)
//! before training starts, so the groups' episode clocks stay offset forever
//! and every rollout batch mixes all task stages. In `naive` mode all
//! environments share one clock and reset together.
//!
//! Resets happen only at gates, between rollouts: a gate fires when at least
//! one environment's lifetime reaches the horizon. Environments that
//! terminate early (not possible in chainworld; exercised by mock envs in
//! tests) are flagged, held frozen, and reset at the next gate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Environment;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Naive,
    #[default]
    Staggered,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Naive => "naive",
            Mode::Staggered => "staggered",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(Mode::Naive),
            "staggered" => Ok(Mode::Staggered),
            other => Err(format!("unknown mode {other:?}, expected \"naive\" or \"staggered\"")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("need at least one environment")]
    NoEnvs,
    #[error("rollout length {k} must lie in [1, horizon {horizon}]")]
    BadRolloutLength { k: u32, horizon: u32 },
    #[error("num_groups {groups} with stagger step {step} exceeds horizon {horizon}: offsets must lie in [0, H)")]
    OffsetsExceedHorizon { groups: u32, step: u32, horizon: u32 },
    #[error("num_groups must be at least 1")]
    NoGroups,
    #[error("naive mode cannot use num_groups {0} (> 1)")]
    NaiveWithGroups(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaggerSchedule {
    pub mode: Mode,
    pub num_envs: usize,
    pub num_groups: u32,
    pub stagger_step: u32,
    pub horizon: u32,
    /// Initial episode-clock offset of each env, in steps.
    pub offsets: Vec<u32>,
    pub group_of: Vec<u32>,
    /// Early-terminated envs awaiting the next gate.
    pub pending_reset: Vec<bool>,
}

/// Why an environment was reset at a gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetReason {
    /// Lifetime reached the horizon.
    Horizon,
    /// Early termination, deferred to this gate.
    PartialDeferred,
}

impl ResetReason {
    /// Label used in resets.csv.
    pub fn as_str(self) -> &'static str {
        match self {
            ResetReason::Horizon => "horizon",
            ResetReason::PartialDeferred => "partial-deferred",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResetEvent {
    pub env_id: usize,
    pub reason: ResetReason,
    /// Whether the episode that just ended met the task's success condition.
    pub was_success: bool,
}

/// Builds the offset schedule.
///
/// The stagger step is S = K. In staggered mode `num_groups` defaults to
/// ceil(H / K); offsets are assigned contiguously (the first chunk of envs
/// gets 0, the next S, ...) with group sizes differing by at most one.
pub fn build_schedule(
    num_envs: usize,
    horizon: u32,
    rollout_k: u32,
    num_groups: Option<u32>,
    mode: Mode,
) -> Result<StaggerSchedule, ScheduleError> {
    if num_envs == 0 {
        return Err(ScheduleError::NoEnvs);
    }
    if rollout_k == 0 || rollout_k > horizon {
        return Err(ScheduleError::BadRolloutLength { k: rollout_k, horizon });
    }
    let stagger_step = rollout_k;
    let groups = match (mode, num_groups) {
        (Mode::Naive, None) | (Mode::Naive, Some(1)) => 1,
        (Mode::Naive, Some(g)) => return Err(ScheduleError::NaiveWithGroups(g)),
        (Mode::Staggered, None) => horizon.div_ceil(rollout_k),
        (Mode::Staggered, Some(0)) => return Err(ScheduleError::NoGroups),
        (Mode::Staggered, Some(g)) => g,
    };
    // Largest offset is (groups - 1) * S; it must stay below the horizon.
    if (groups - 1).checked_mul(stagger_step).is_none_or(|max| max >= horizon) {
        return Err(ScheduleError::OffsetsExceedHorizon { groups, step: stagger_step, horizon });
    }

    // Contiguous partition; the first (N mod N_B) groups take the extra env.
    let base = num_envs / groups as usize;
    let remainder = num_envs % groups as usize;
    let mut offsets = Vec::with_capacity(num_envs);
    let mut group_of = Vec::with_capacity(num_envs);
    for g in 0..groups {
        let size = base + usize::from((g as usize) < remainder);
        offsets.extend(std::iter::repeat_n(g * stagger_step, size));
        group_of.extend(std::iter::repeat_n(g, size));
    }
    debug_assert_eq!(offsets.len(), num_envs);

    Ok(StaggerSchedule {
        mode,
        num_envs,
        num_groups: groups,
        stagger_step,
        horizon,
        offsets,
        group_of,
        pending_reset: vec![false; num_envs],
    })
}

/// Marks an early-terminated env for reset at the next gate. Idempotent.
pub fn flag_partial_reset(schedule: &mut StaggerSchedule, env_id: usize) {
    schedule.pending_reset[env_id] = true;
}

/// Pre-advances each freshly reset env by its offset using uniform-random
/// actions. These warmup transitions never enter a training buffer. Should a
/// warmup episode terminate early (mock envs only), the env is flagged and
/// left frozen for the first gate.
pub fn apply_initial_stagger<E: Environment>(
    env: &E,
    states: &mut [E::State],
    schedule: &mut StaggerSchedule,
    step_rngs: &mut [RngStream],
    action_rngs: &mut [RngStream],
) {
    assert_eq!(states.len(), schedule.num_envs);
    for (i, state) in states.iter_mut().enumerate() {
        for _ in 0..schedule.offsets[i] {
            let action = action_rngs[i].range(env.num_actions());
            let (_, done) = env.step(state, action, &mut step_rngs[i]);
            if done {
                if env.lifetime_elapsed(state) < env.horizon() {
                    flag_partial_reset(schedule, i);
                }
                break;
            }
        }
    }
}

/// Applies the reset protocol after a rollout.
///
/// A gate fires when at least one env's lifetime has reached the horizon.
/// When it does, every such env is fully reset, and every env flagged
/// `pending_reset` is reset alongside it. No other env is touched.
pub fn gate_step<E: Environment>(
    env: &E,
    states: &mut [E::State],
    schedule: &mut StaggerSchedule,
    reset_rngs: &mut [RngStream],
) -> Vec<ResetEvent> {
    assert_eq!(states.len(), schedule.num_envs);
    let gate_fires = states.iter().any(|s| env.lifetime_elapsed(s) >= schedule.horizon);
    if !gate_fires {
        return Vec::new();
    }
    let mut log = Vec::new();
    for (i, state) in states.iter_mut().enumerate() {
        let reason = if env.lifetime_elapsed(state) >= schedule.horizon {
            ResetReason::Horizon
        } else if schedule.pending_reset[i] {
            ResetReason::PartialDeferred
        } else {
            continue;
        };
        log.push(ResetEvent { env_id: i, reason, was_success: env.is_success(state) });
        *state = env.reset(&mut reset_rngs[i]);
        schedule.pending_reset[i] = false;
    }
    log
}
