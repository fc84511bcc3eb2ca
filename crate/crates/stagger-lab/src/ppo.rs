//! PPO with clipped surrogate objective, GAE, and Adam, built directly on
//! the network's analytic gradients.
//!
//! Per-sample loss math runs in f64 regardless of the parameter precision;
//! only the final output-side gradients are cast back to `F` before the
//! backward pass. At `F = f64` the whole chain is pure double precision,
//! which is what the finite-difference tests exercise.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Environment;
use crate::net::{
    backward, evaluate_actions, forward, forward_cached, log_softmax,
    sample_from_log_probs, GradientSet, NetworkParams,
};
use crate::rng::RngStream;
use crate::stagger::{flag_partial_reset, StaggerSchedule};
use crate::Real;

fn default_lr() -> f64 {
    3e-4
}
fn default_gamma() -> f64 {
    0.99
}
fn default_gae_lambda() -> f64 {
    0.95
}
fn default_rollout_len() -> usize {
    5
}
fn default_num_envs() -> usize {
    512
}
fn default_total_updates() -> usize {
    150
}
fn default_epochs() -> usize {
    4
}
fn default_num_minibatches() -> usize {
    4
}
fn default_clip_eps() -> f64 {
    0.2
}
fn default_vf_coef() -> f64 {
    0.5
}
fn default_ent_coef() -> f64 {
    0.01
}
fn default_max_grad_norm() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}
fn default_adam_beta1() -> f64 {
    0.9
}
fn default_adam_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

/// Optimizer and batching settings. Every field has the toy-scale default,
/// so a config file can override any subset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_gae_lambda")]
    pub gae_lambda: f64,
    /// K: policy steps per env between consecutive update phases.
    #[serde(rename = "rollout_K", default = "default_rollout_len")]
    pub rollout_len: usize,
    /// N: parallel environments.
    #[serde(rename = "num_envs_N", default = "default_num_envs")]
    pub num_envs: usize,
    #[serde(default = "default_total_updates")]
    pub total_updates: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_num_minibatches")]
    pub num_minibatches: usize,
    #[serde(default = "default_clip_eps")]
    pub clip_eps: f64,
    #[serde(default = "default_vf_coef")]
    pub vf_coef: f64,
    #[serde(default = "default_ent_coef")]
    pub ent_coef: f64,
    #[serde(default = "default_max_grad_norm")]
    pub max_grad_norm: f64,
    #[serde(default = "default_true")]
    pub normalize_adv: bool,
    #[serde(default = "default_adam_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_adam_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PpoConfigError {
    #[error("{name} must be positive")]
    NonPositive { name: &'static str },
    #[error("{name} = {value} outside [0, 1]")]
    BadUnitRange { name: &'static str, value: f64 },
    #[error("batch size {batch} not divisible by num_minibatches {minibatches}")]
    BatchNotDivisible { batch: usize, minibatches: usize },
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoConfigError> {
        let positive: [(&'static str, f64); 4] = [
            ("lr", self.lr),
            ("clip_eps", self.clip_eps),
            ("max_grad_norm", self.max_grad_norm),
            ("adam_eps", self.adam_eps),
        ];
        for (name, value) in positive {
            if !(value > 0.0) {
                return Err(PpoConfigError::NonPositive { name });
            }
        }
        let counts: [(&'static str, usize); 5] = [
            ("rollout_K", self.rollout_len),
            ("num_envs_N", self.num_envs),
            ("total_updates", self.total_updates),
            ("epochs", self.epochs),
            ("num_minibatches", self.num_minibatches),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(PpoConfigError::NonPositive { name });
            }
        }
        let unit: [(&'static str, f64); 6] = [
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda),
            ("vf_coef", self.vf_coef),
            ("ent_coef", self.ent_coef),
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ];
        for (name, value) in unit {
            if !(0.0..=1.0).contains(&value) {
                return Err(PpoConfigError::BadUnitRange { name, value });
            }
        }
        let batch = self.num_envs * self.rollout_len;
        if batch % self.num_minibatches != 0 {
            return Err(PpoConfigError::BatchNotDivisible { batch, minibatches: self.num_minibatches });
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("rollout buffer has no valid samples")]
    EmptyBatch,
    #[error("non-finite loss in minibatch (epoch {epoch})")]
    NonFiniteLoss { epoch: usize },
    #[error("non-finite parameters after update")]
    NonFiniteParams,
}

/// One K-step slice of experience from N envs, env-major: row `i * K + t`.
///
/// `valid[row]` is false for steps where the env sat frozen on a finished
/// episode waiting for a gate; such rows carry zeros and are excluded from
/// GAE and the update.
#[derive(Debug, Clone)]
pub struct RolloutBuffer<F> {
    pub num_envs: usize,
    pub rollout_len: usize,
    pub obs: Vec<usize>,
    pub actions: Vec<usize>,
    pub log_probs_old: Vec<F>,
    pub rewards: Vec<f64>,
    /// True when the step terminated the episode.
    pub dones: Vec<bool>,
    /// V(s_t) under the snapshot policy that collected the rollout.
    pub values: Vec<F>,
    /// V(s_K) per env, zeroed where step K-1 ended the episode.
    pub bootstrap_values: Vec<F>,
    pub valid: Vec<bool>,
    /// Lifetime step count at observation time (diagnostics).
    pub elapsed: Vec<u32>,
}

impl<F: Real> RolloutBuffer<F> {
    pub fn len(&self) -> usize {
        self.num_envs * self.rollout_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.valid[i]).collect()
    }
}

/// Collects one rollout: K batched forward/sample/step rounds plus the
/// bootstrap evaluation. Params are read-only throughout (pi_old snapshot).
///
/// Envs that are already done (or finish mid-rollout) are frozen: their rows
/// are invalid, and neither their sample stream nor their step stream draws.
/// Finishing before the lifetime horizon flags the env for a deferred reset.
pub fn collect_rollout<F: Real, E: Environment>(
    params: &NetworkParams<F>,
    env: &E,
    states: &mut [E::State],
    schedule: &mut StaggerSchedule,
    rollout_len: usize,
    sample_rngs: &mut [RngStream],
    step_rngs: &mut [RngStream],
) -> RolloutBuffer<F> {
    let n = states.len();
    assert_eq!(n, sample_rngs.len());
    assert_eq!(n, step_rngs.len());
    assert!(rollout_len > 0, "empty rollout");

    let rows = n * rollout_len;
    let mut buffer = RolloutBuffer {
        num_envs: n,
        rollout_len,
        obs: vec![0; rows],
        actions: vec![0; rows],
        log_probs_old: vec![F::zero(); rows],
        rewards: vec![0.0; rows],
        dones: vec![false; rows],
        values: vec![F::zero(); rows],
        bootstrap_values: vec![F::zero(); n],
        valid: vec![false; rows],
        elapsed: vec![0; rows],
    };

    for t in 0..rollout_len {
        let obs: Vec<usize> = states.iter().map(|s| env.observe(s)).collect();
        let (logits, values) = forward(params, &obs);
        let log_probs = log_softmax(&logits);
        for i in 0..n {
            if env.is_done(&states[i]) {
                continue;
            }
            let row = i * rollout_len + t;
            let (action, log_prob) = sample_from_log_probs(log_probs.row(i), &mut sample_rngs[i]);
            let (reward, done) = env.step(&mut states[i], action, &mut step_rngs[i]);
            buffer.obs[row] = obs[i];
            buffer.actions[row] = action;
            buffer.log_probs_old[row] = log_prob;
            buffer.rewards[row] = reward;
            buffer.dones[row] = done;
            buffer.values[row] = values[i];
            buffer.valid[row] = true;
            buffer.elapsed[row] = env.lifetime_elapsed(&states[i]) - 1;
            if done && env.lifetime_elapsed(&states[i]) < env.horizon() {
                flag_partial_reset(schedule, i);
            }
        }
    }

    let final_obs: Vec<usize> = states.iter().map(|s| env.observe(s)).collect();
    let (_, final_values) = forward(params, &final_obs);
    for i in 0..n {
        buffer.bootstrap_values[i] = if env.is_done(&states[i]) { F::zero() } else { final_values[i] };
    }
    buffer
}

/// GAE(gamma, lambda) advantages and returns, env by env, f64 accumulation.
/// Invalid rows yield zeros and reset the recursion carry.
pub fn compute_gae<F: Real>(buffer: &RolloutBuffer<F>, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let k = buffer.rollout_len;
    let mut advantages = vec![0.0; buffer.len()];
    let mut returns = vec![0.0; buffer.len()];
    for i in 0..buffer.num_envs {
        let mut carry = 0.0f64;
        for t in (0..k).rev() {
            let row = i * k + t;
            if !buffer.valid[row] {
                carry = 0.0;
                continue;
            }
            let not_done = if buffer.dones[row] { 0.0 } else { 1.0 };
            let next_value = if t + 1 == k {
                buffer.bootstrap_values[i].as_f64()
            } else {
                buffer.values[row + 1].as_f64()
            };
            let value = buffer.values[row].as_f64();
            let delta = buffer.rewards[row] + gamma * next_value * not_done - value;
            carry = delta + gamma * lambda * not_done * carry;
            advantages[row] = carry;
            returns[row] = carry + value;
        }
    }
    (advantages, returns)
}

/// Clipped surrogate objective: mean of -min(rho*A, clip(rho)*A).
pub fn clipped_policy_loss(
    log_probs_new: &[f64],
    log_probs_old: &[f64],
    advantages: &[f64],
    clip_eps: f64,
) -> f64 {
    assert_eq!(log_probs_new.len(), log_probs_old.len());
    assert_eq!(log_probs_new.len(), advantages.len());
    let total: f64 = log_probs_new
        .iter()
        .zip(log_probs_old)
        .zip(advantages)
        .map(|((&lp_new, &lp_old), &adv)| {
            let ratio = (lp_new - lp_old).exp();
            let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
            -f64::min(ratio * adv, clipped * adv)
        })
        .sum();
    total / log_probs_new.len() as f64
}

/// Normalizes in place to mean 0 / std 1 (sample std, n-1 denominator, 1e-8
/// guard). A single sample (or zero spread) normalizes to 0.
pub fn normalize_advantages(advantages: &mut [f64]) {
    let n = advantages.len();
    if n == 0 {
        return;
    }
    let mean = advantages.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    for a in advantages.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}

/// Borrowed view of one minibatch (advantages already normalized if enabled).
pub struct Minibatch<'a> {
    pub obs: &'a [usize],
    pub actions: &'a [usize],
    pub log_probs_old: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

pub struct MinibatchStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Samples whose ratio left [1 - eps, 1 + eps].
    pub clipped: usize,
}

/// Loss and exact parameter gradients for one minibatch.
///
/// total = policy + vf_coef * value_mse - ent_coef * entropy. The returned
/// gradients differentiate exactly this scalar, which the finite-difference
/// suite verifies per component.
pub fn minibatch_loss_and_grads<F: Real>(
    params: &NetworkParams<F>,
    mb: &Minibatch,
    clip_eps: f64,
    vf_coef: f64,
    ent_coef: f64,
) -> (f64, GradientSet<F>, MinibatchStats) {
    let m = mb.obs.len();
    assert!(m > 0, "empty minibatch");
    assert_eq!(m, mb.actions.len());
    assert_eq!(m, mb.log_probs_old.len());
    assert_eq!(m, mb.advantages.len());
    assert_eq!(m, mb.returns.len());

    let pass = forward_cached(params, mb.obs);
    let log_probs = log_softmax(&pass.logits);
    let num_actions = pass.logits.ncols();
    let scale = 1.0 / m as f64;

    let mut d_logits: Array2<F> = Array2::zeros((m, num_actions));
    let mut d_values: Array1<F> = Array1::zeros(m);
    let mut policy_loss = 0.0f64;
    let mut value_loss = 0.0f64;
    let mut entropy_sum = 0.0f64;
    let mut clipped = 0usize;

    for row in 0..m {
        let action = mb.actions[row];
        let lp_new = log_probs[(row, action)].as_f64();
        let ratio = (lp_new - mb.log_probs_old[row]).exp();
        let adv = mb.advantages[row];
        let surr_raw = ratio * adv;
        let surr_clip = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv;
        policy_loss -= f64::min(surr_raw, surr_clip) * scale;
        if (ratio - 1.0).abs() > clip_eps {
            clipped += 1;
        }
        // d(policy)/d(lp_new): the min picks the raw branch unless clipping
        // already binds, in which case the gradient dies.
        let g_lp = if surr_raw <= surr_clip { -ratio * adv * scale } else { 0.0 };

        let probs: Vec<f64> = (0..num_actions).map(|a| log_probs[(row, a)].as_f64().exp()).collect();
        let h: f64 = probs
            .iter()
            .zip(log_probs.row(row))
            .map(|(&p, lp)| -p * lp.as_f64())
            .sum();
        entropy_sum += h;

        for a in 0..num_actions {
            let indicator = if a == action { 1.0 } else { 0.0 };
            let policy_term = g_lp * (indicator - probs[a]);
            // -ent_coef * dH/dz_a, with dH/dz_a = -p_a (lp_a + H).
            let entropy_term = ent_coef * scale * probs[a] * (log_probs[(row, a)].as_f64() + h);
            d_logits[(row, a)] = F::from_f64(policy_term + entropy_term);
        }

        let v = pass.values[row].as_f64();
        let err = v - mb.returns[row];
        value_loss += err * err * scale;
        d_values[row] = F::from_f64(2.0 * vf_coef * err * scale);
    }

    let entropy = entropy_sum * scale;
    let total = policy_loss + vf_coef * value_loss - ent_coef * entropy;
    let grads = backward(params, &pass, &d_logits, &d_values);
    (total, grads, MinibatchStats { policy_loss, value_loss, entropy, clipped })
}

/// Scales gradients so the global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<F: Real>(grads: &mut GradientSet<F>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Adam moments, kept in f64 at every parameter precision.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState { m: vec![0.0; param_count], v: vec![0.0; param_count], t: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam step over every parameter tensor.
pub fn adam_step<F: Real>(
    params: &mut NetworkParams<F>,
    grads: &GradientSet<F>,
    adam: &mut AdamState,
    cfg: &PpoConfig,
) {
    adam.t += 1;
    let bias1 = 1.0 - cfg.adam_beta1.powi(adam.t as i32);
    let bias2 = 1.0 - cfg.adam_beta2.powi(adam.t as i32);
    let mut offset = 0usize;
    let grad_entries = grads.tensor_entries();
    let mut grad_iter = grad_entries.iter();
    for (name, slice) in params.tensor_slices_mut() {
        let (g_name, _, g_data) = grad_iter.next().expect("congruent tensor sets");
        debug_assert_eq!(&name, g_name, "tensor order mismatch");
        for (p, &g) in slice.iter_mut().zip(g_data.iter()) {
            let g = g.as_f64();
            let m = &mut adam.m[offset];
            let v = &mut adam.v[offset];
            *m = cfg.adam_beta1 * *m + (1.0 - cfg.adam_beta1) * g;
            *v = cfg.adam_beta2 * *v + (1.0 - cfg.adam_beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= F::from_f64(cfg.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps));
            offset += 1;
        }
    }
    assert_eq!(offset, adam.m.len(), "adam state sized for a different network");
}

/// Contiguous near-equal partition of 0..n into `parts` ranges (first
/// n % parts ranges get the extra element).
pub fn chunk_bounds(n: usize, parts: usize) -> Vec<(usize, usize)> {
    assert!(parts > 0);
    let base = n / parts;
    let extra = n % parts;
    let mut bounds = Vec::with_capacity(parts);
    let mut start = 0;
    for part in 0..parts {
        let len = base + usize::from(part < extra);
        bounds.push((start, start + len));
        start += len;
    }
    bounds
}

#[derive(Debug, Clone, Copy)]
pub struct UpdateStats {
    /// Mean (V - GAE return)^2 over the buffer, measured before the update.
    pub value_mse: f64,
    /// 0.5 * mean((lp_new - lp_old)^2) over the buffer, after the update.
    pub approx_kl: f64,
    /// Mean policy entropy over the buffer, after the update.
    pub entropy: f64,
    /// Fraction of processed samples whose ratio left the clip range.
    pub clip_fraction: f64,
    /// Mean clipped surrogate loss over all minibatches.
    pub policy_loss: f64,
    /// Mean value MSE over all minibatches (training view, normalized adv).
    pub value_loss: f64,
    /// Largest pre-clip global gradient norm seen during the update.
    pub grad_norm_pre_clip: f64,
}

/// One PPO update phase: epochs x shuffled minibatches over the valid rows,
/// then a full-batch re-evaluation for KL and entropy.
pub fn update<F: Real>(
    params: &mut NetworkParams<F>,
    adam: &mut AdamState,
    buffer: &RolloutBuffer<F>,
    cfg: &PpoConfig,
    shuffle_rng: &mut RngStream,
) -> Result<UpdateStats, PpoError> {
    let (advantages, returns) = compute_gae(buffer, cfg.gamma, cfg.gae_lambda);
    let valid = buffer.valid_indices();
    if valid.is_empty() {
        return Err(PpoError::EmptyBatch);
    }

    let value_mse = valid
        .iter()
        .map(|&row| {
            let err = buffer.values[row].as_f64() - returns[row];
            err * err
        })
        .sum::<f64>()
        / valid.len() as f64;

    let mut clipped = 0usize;
    let mut seen = 0usize;
    let mut policy_loss_sum = 0.0f64;
    let mut value_loss_sum = 0.0f64;
    let mut minibatches_run = 0usize;
    let mut grad_norm_pre_clip = 0.0f64;

    let mut order = valid.clone();
    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        for (start, end) in chunk_bounds(order.len(), cfg.num_minibatches) {
            if start == end {
                continue;
            }
            let rows = &order[start..end];
            let obs: Vec<usize> = rows.iter().map(|&r| buffer.obs[r]).collect();
            let actions: Vec<usize> = rows.iter().map(|&r| buffer.actions[r]).collect();
            let log_probs_old: Vec<f64> = rows.iter().map(|&r| buffer.log_probs_old[r].as_f64()).collect();
            let mut adv: Vec<f64> = rows.iter().map(|&r| advantages[r]).collect();
            let ret: Vec<f64> = rows.iter().map(|&r| returns[r]).collect();
            if cfg.normalize_adv {
                normalize_advantages(&mut adv);
            }
            let mb = Minibatch {
                obs: &obs,
                actions: &actions,
                log_probs_old: &log_probs_old,
                advantages: &adv,
                returns: &ret,
            };
            let (loss, mut grads, stats) =
                minibatch_loss_and_grads(params, &mb, cfg.clip_eps, cfg.vf_coef, cfg.ent_coef);
            if !loss.is_finite() {
                return Err(PpoError::NonFiniteLoss { epoch });
            }
            grad_norm_pre_clip = grad_norm_pre_clip.max(clip_global_norm(&mut grads, cfg.max_grad_norm));
            adam_step(params, &grads, adam, cfg);
            clipped += stats.clipped;
            seen += rows.len();
            policy_loss_sum += stats.policy_loss;
            value_loss_sum += stats.value_loss;
            minibatches_run += 1;
        }
    }

    if !params.all_finite() {
        return Err(PpoError::NonFiniteParams);
    }

    // Post-update policy statistics over the full valid batch.
    let obs: Vec<usize> = valid.iter().map(|&r| buffer.obs[r]).collect();
    let actions: Vec<usize> = valid.iter().map(|&r| buffer.actions[r]).collect();
    let (log_probs_new, entropies, _) = evaluate_actions(params, &obs, &actions);
    let approx_kl = valid
        .iter()
        .zip(&log_probs_new)
        .map(|(&r, lp_new)| {
            let d = lp_new.as_f64() - buffer.log_probs_old[r].as_f64();
            0.5 * d * d
        })
        .sum::<f64>()
        / valid.len() as f64;
    let entropy = entropies.iter().map(|h| h.as_f64()).sum::<f64>() / valid.len() as f64;

    Ok(UpdateStats {
        value_mse,
        approx_kl,
        entropy,
        clip_fraction: clipped as f64 / seen as f64,
        policy_loss: policy_loss_sum / minibatches_run as f64,
        value_loss: value_loss_sum / minibatches_run as f64,
        grad_norm_pre_clip,
    })
}
