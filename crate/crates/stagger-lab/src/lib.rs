//! Desk-scale laboratory for studying how episode-reset scheduling interacts
//! with synchronous on-policy RL.
//!
//! The library simulates a 1-D block-chain task in `N` parallel environments,
//! trains a small actor-critic network with PPO, and instruments the run with
//! the metrics that expose cyclical batch nonstationarity: block occupancy,
//! value-prediction error, approximate KL, and a per-block forgetting matrix.
//! Two reset policies are compared: `naive` (all environments reset together
//! every `H` steps) and `staggered` (environments split into offset groups so
//! every rollout batch mixes all task stages).
//!
//! Modules, bottom-up:
//! - [`rng`]: counter-based deterministic random streams.
//! - [`env`]: the environment trait used by the scheduler and the collector.
//! - [`chainworld`]: the block-chain task itself.
//! - [`stagger`]: offset-group construction and the reset-gate protocol.
//! - [`net`]: embedding + MLP actor-critic with hand-rolled exact gradients.
//! - [`checkpoint`]: versioned binary parameter snapshots.
//! - [`ppo`]: rollout collection, GAE, the clipped-surrogate update, Adam.
//! - [`metrics`]: accuracy, occupancy, KL, and forgetting instrumentation.
//! - [`config`]: JSON run configuration (fail-loud on unknown keys).
//! - [`runner`]: full experiments, sweeps, aggregation, CSV persistence.

pub mod chainworld;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod metrics;
pub mod net;
pub mod ppo;
pub mod rng;
pub mod runner;
pub mod stagger;

/// Floating-point element type for the numeric stack.
///
/// Training instantiates the stack at `f32`; gradient-check tests instantiate
/// the identical code paths at `f64`.
pub trait Real:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}
