//! Environment abstraction shared by the reset scheduler and the rollout
//! collector.
//!
//! Implementations are pure state machines: all randomness comes from the
//! per-environment stream passed in, so a batch of environments may be
//! evaluated in any order (or in parallel) with identical results.

use crate::rng::RngStream;

pub trait Environment {
    type State: Clone;

    /// Number of distinct observation indices (embedding rows required).
    fn num_obs(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Scheduler horizon: lifetimes reaching this trigger a full reset.
    fn horizon(&self) -> u32;

    /// Starts a fresh episode.
    fn reset(&self, rng: &mut RngStream) -> Self::State;

    /// Advances a live episode one step, returning (reward, done).
    ///
    /// Stepping a finished episode is a contract violation and panics.
    fn step(&self, state: &mut Self::State, action: usize, rng: &mut RngStream) -> (f64, bool);

    /// Observation index for the current state.
    fn observe(&self, state: &Self::State) -> usize;
    fn is_done(&self, state: &Self::State) -> bool;
    /// Steps taken since the last full reset (the scheduler's clock).
    fn lifetime_elapsed(&self, state: &Self::State) -> u32;
    /// Whether the episode (at its current, possibly terminal, state) counts
    /// as a task success.
    fn is_success(&self, state: &Self::State) -> bool;
}
