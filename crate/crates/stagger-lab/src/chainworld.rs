//! The 1-D block-chain task.
//!
//! A chain of `B` blocks, each `L` steps long, with horizon `H = B * L`.
//! The agent observes only its current block index and earns +0.5 for picking
//! that block's target action, -0.5 otherwise. Block advancement is gated:
//! while more steps have nominally passed than the agent's block reflects
//! (`elapsed >= (block+1) * L`), the agent moves up one block per step once it
//! has produced `mastery_threshold` correct actions in its current block this
//! episode, and a Bernoulli(`p`) draw at each block boundary (every `L` steps)
//! lets it through without mastery. Chance-level play therefore clears at most
//! one gate per boundary and essentially never finishes a long chain, while a
//! skilled agent that loses a draw catches back up by mastering blocks between
//! boundaries. Episodes last exactly `H` steps; resets start at block
//! `b0 ~ Poisson(lambda)` clamped to `[0, B-1]`.

use thiserror::Error;

use crate::env::Environment;
use crate::rng::{Domain, RngStream};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("horizon {horizon} is not block_length {block_length} * num_blocks {num_blocks}")]
    HorizonMismatch { horizon: u32, block_length: u32, num_blocks: u32 },
    #[error("{what} must be positive")]
    NonPositive { what: &'static str },
    #[error("progression_prob {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("reset_lambda {0} must be nonnegative and finite")]
    BadLambda(f64),
    #[error("target_actions has length {got}, expected num_blocks {expected}")]
    TargetLength { got: usize, expected: usize },
    #[error("target_actions[{index}] = {action} outside action space of size {num_actions}")]
    TargetOutOfRange { index: usize, action: usize, num_actions: usize },
}

/// Sizing and dynamics parameters, without the per-run target actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvParams {
    pub horizon: u32,
    pub block_length: u32,
    pub num_actions: usize,
    pub reward_correct: f64,
    pub reward_incorrect: f64,
    pub progression_prob: f64,
    pub mastery_threshold: u32,
    pub reset_lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub horizon: u32,
    pub block_length: u32,
    pub num_blocks: u32,
    pub num_actions: usize,
    pub reward_correct: f64,
    pub reward_incorrect: f64,
    pub progression_prob: f64,
    pub mastery_threshold: u32,
    pub reset_lambda: f64,
    pub target_actions: Vec<usize>,
}

impl EnvConfig {
    pub fn new(params: EnvParams, target_actions: Vec<usize>) -> Result<Self, EnvError> {
        if params.horizon == 0 {
            return Err(EnvError::NonPositive { what: "horizon" });
        }
        if params.block_length == 0 {
            return Err(EnvError::NonPositive { what: "block_length" });
        }
        if params.num_actions == 0 {
            return Err(EnvError::NonPositive { what: "num_actions" });
        }
        if params.horizon % params.block_length != 0 {
            return Err(EnvError::HorizonMismatch {
                horizon: params.horizon,
                block_length: params.block_length,
                num_blocks: params.horizon / params.block_length,
            });
        }
        let num_blocks = params.horizon / params.block_length;
        if !(0.0..=1.0).contains(&params.progression_prob) {
            return Err(EnvError::BadProbability(params.progression_prob));
        }
        if !params.reset_lambda.is_finite() || params.reset_lambda < 0.0 {
            return Err(EnvError::BadLambda(params.reset_lambda));
        }
        if target_actions.len() != num_blocks as usize {
            return Err(EnvError::TargetLength { got: target_actions.len(), expected: num_blocks as usize });
        }
        if let Some((index, &action)) =
            target_actions.iter().enumerate().find(|&(_, &a)| a >= params.num_actions)
        {
            return Err(EnvError::TargetOutOfRange { index, action, num_actions: params.num_actions });
        }
        Ok(EnvConfig {
            horizon: params.horizon,
            block_length: params.block_length,
            num_blocks,
            num_actions: params.num_actions,
            reward_correct: params.reward_correct,
            reward_incorrect: params.reward_incorrect,
            progression_prob: params.progression_prob,
            mastery_threshold: params.mastery_threshold,
            reset_lambda: params.reset_lambda,
            target_actions,
        })
    }

    /// Builds the config with target actions drawn from the run seed. The
    /// draw depends only on (seed, B, A_c), so paired runs that share a seed
    /// see identical targets.
    pub fn with_seeded_targets(params: EnvParams, seed: u64) -> Result<Self, EnvError> {
        if params.block_length == 0 {
            return Err(EnvError::NonPositive { what: "block_length" });
        }
        if params.horizon % params.block_length != 0 {
            return Err(EnvError::HorizonMismatch {
                horizon: params.horizon,
                block_length: params.block_length,
                num_blocks: params.horizon / params.block_length,
            });
        }
        let num_blocks = params.horizon / params.block_length;
        let targets = sample_target_actions(seed, num_blocks as usize, params.num_actions);
        EnvConfig::new(params, targets)
    }
}

/// Draws the per-block target actions for a run.
pub fn sample_target_actions(seed: u64, num_blocks: usize, num_actions: usize) -> Vec<usize> {
    let mut rng = RngStream::new(seed, Domain::TargetActions, 0);
    (0..num_blocks).map(|_| rng.range(num_actions)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvState {
    pub block: u32,
    pub elapsed: u32,
    pub correct_in_block: u32,
    pub episode_done: bool,
    pub lifetime_elapsed: u32,
}

/// Poisson(lambda) start block, clamped into [0, B-1].
pub fn sample_reset_block(reset_lambda: f64, num_blocks: u32, rng: &mut RngStream) -> u32 {
    assert!(num_blocks >= 1, "empty chain");
    if reset_lambda == 0.0 {
        return 0;
    }
    (rng.poisson(reset_lambda) as u32).min(num_blocks - 1)
}

/// Starts a fresh episode at a sampled start block.
pub fn reset(cfg: &EnvConfig, rng: &mut RngStream) -> EnvState {
    EnvState {
        block: sample_reset_block(cfg.reset_lambda, cfg.num_blocks, rng),
        elapsed: 0,
        correct_in_block: 0,
        episode_done: false,
        lifetime_elapsed: 0,
    }
}

/// One environment step. Panics if the episode is already done or the action
/// is out of range (contract violations).
pub fn step(state: &EnvState, action: usize, cfg: &EnvConfig, rng: &mut RngStream) -> (EnvState, f64, bool) {
    assert!(!state.episode_done, "step on a finished episode");
    assert!(action < cfg.num_actions, "action {action} outside action space {}", cfg.num_actions);

    let correct = action == cfg.target_actions[state.block as usize];
    let reward = if correct { cfg.reward_correct } else { cfg.reward_incorrect };

    let mut next = *state;
    if correct {
        next.correct_in_block += 1;
    }
    next.elapsed += 1;
    next.lifetime_elapsed += 1;

    // Advancement while the nominal block is ahead of the actual one: mastery
    // is checked on every lagging step (a skilled agent catches up at one
    // block per k correct steps), but the stochastic bypass is drawn only when
    // elapsed crosses a block boundary. Chance-level play thus advances at
    // most one block per boundary and cannot finish a long chain, while an
    // agent that loses a draw recovers through mastery.
    let nominal = (next.elapsed / cfg.block_length).min(cfg.num_blocks - 1);
    if nominal > next.block {
        let pass = next.correct_in_block >= cfg.mastery_threshold
            || (next.elapsed % cfg.block_length == 0 && rng.bernoulli(cfg.progression_prob));
        if pass {
            next.block += 1;
            next.correct_in_block = 0;
        }
    }

    next.episode_done = next.elapsed >= cfg.horizon;
    (next, reward, next.episode_done)
}

/// Vectorized step: element i uses its own stream, so the result equals N
/// independent single steps in any evaluation order.
pub fn step_batch(
    states: &[EnvState],
    actions: &[usize],
    cfg: &EnvConfig,
    rngs: &mut [RngStream],
) -> (Vec<EnvState>, Vec<f64>, Vec<bool>) {
    assert_eq!(states.len(), actions.len(), "states/actions length mismatch");
    assert_eq!(states.len(), rngs.len(), "states/rngs length mismatch");
    let mut next_states = Vec::with_capacity(states.len());
    let mut rewards = Vec::with_capacity(states.len());
    let mut dones = Vec::with_capacity(states.len());
    for ((state, &action), rng) in states.iter().zip(actions).zip(rngs.iter_mut()) {
        let (next, reward, done) = step(state, action, cfg, rng);
        next_states.push(next);
        rewards.push(reward);
        dones.push(done);
    }
    (next_states, rewards, dones)
}

impl Environment for EnvConfig {
    type State = EnvState;

    fn num_obs(&self) -> usize {
        self.num_blocks as usize
    }
    fn num_actions(&self) -> usize {
        self.num_actions
    }
    fn horizon(&self) -> u32 {
        self.horizon
    }
    fn reset(&self, rng: &mut RngStream) -> EnvState {
        reset(self, rng)
    }
    fn step(&self, state: &mut EnvState, action: usize, rng: &mut RngStream) -> (f64, bool) {
        let (next, reward, done) = step(state, action, self, rng);
        *state = next;
        (reward, done)
    }
    fn observe(&self, state: &EnvState) -> usize {
        state.block as usize
    }
    fn is_done(&self, state: &EnvState) -> bool {
        state.episode_done
    }
    fn lifetime_elapsed(&self, state: &EnvState) -> u32 {
        state.lifetime_elapsed
    }
    fn is_success(&self, state: &EnvState) -> bool {
        state.block == self.num_blocks - 1
    }
}
