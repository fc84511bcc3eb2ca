//! Reference implementations and helpers shared by the integration tests.
//! Everything here is deliberately written as a direct transcription of the
//! definitions, trading speed for obviousness.

#![allow(dead_code)]

use stagger_lab::net::NetworkParams;
use stagger_lab::ppo::RolloutBuffer;
use stagger_lab::rng::RngStream;

/// Term-by-term GAE expansion: for each valid row, walk forward summing
/// (gamma * lambda)^l * delta until a terminal step, an invalid row, or the
/// end of the rollout. Independent of the production backward recursion.
pub fn brute_force_gae(
    buffer: &RolloutBuffer<f64>,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let k = buffer.rollout_len;
    let mut advantages = vec![0.0; buffer.len()];
    let mut returns = vec![0.0; buffer.len()];
    for i in 0..buffer.num_envs {
        for t in 0..k {
            let row = i * k + t;
            if !buffer.valid[row] {
                continue;
            }
            let mut acc = 0.0f64;
            let mut factor = 1.0f64;
            for s in t..k {
                let r = i * k + s;
                let not_done = if buffer.dones[r] { 0.0 } else { 1.0 };
                let next_value = if s + 1 == k {
                    buffer.bootstrap_values[i]
                } else {
                    buffer.values[r + 1]
                };
                acc += factor * (buffer.rewards[r] + gamma * next_value * not_done - buffer.values[r]);
                let stop = buffer.dones[r] || s + 1 == k || !buffer.valid[r + 1];
                if stop {
                    break;
                }
                factor *= gamma * lambda;
            }
            advantages[row] = acc;
            returns[row] = acc + buffer.values[row];
        }
    }
    (advantages, returns)
}

/// Random buffer exercising the shapes collect_rollout can emit: live envs,
/// envs terminating mid-rollout (later rows invalid), and fully frozen envs.
pub fn random_buffer(rng: &mut RngStream, num_envs: usize, rollout_len: usize) -> RolloutBuffer<f64> {
    let rows = num_envs * rollout_len;
    let mut buffer = RolloutBuffer {
        num_envs,
        rollout_len,
        obs: vec![0; rows],
        actions: vec![0; rows],
        log_probs_old: vec![0.0; rows],
        rewards: vec![0.0; rows],
        dones: vec![false; rows],
        values: vec![0.0; rows],
        bootstrap_values: vec![0.0; num_envs],
        valid: vec![true; rows],
        elapsed: vec![0; rows],
    };
    let centered = |rng: &mut RngStream| rng.next_f64() * 4.0 - 2.0;
    for i in 0..num_envs {
        // 0: live all rollout, 1: terminates at a random step, 2: frozen.
        let shape = rng.range(3);
        let done_at = match shape {
            0 => None,
            1 => Some(rng.range(rollout_len)),
            _ => {
                for t in 0..rollout_len {
                    buffer.valid[i * rollout_len + t] = false;
                }
                continue;
            }
        };
        for t in 0..rollout_len {
            let row = i * rollout_len + t;
            buffer.rewards[row] = centered(rng);
            buffer.values[row] = centered(rng);
            match done_at {
                Some(d) if t == d => buffer.dones[row] = true,
                Some(d) if t > d => buffer.valid[row] = false,
                _ => {}
            }
        }
        buffer.bootstrap_values[i] = match done_at {
            Some(_) => 0.0,
            None => centered(rng),
        };
    }
    buffer
}

/// Central finite differences of a scalar function over every parameter.
pub fn fd_gradient<F>(params: &NetworkParams<f64>, h: f64, loss: F) -> Vec<f64>
where
    F: Fn(&NetworkParams<f64>) -> f64,
{
    let mut probe = params.clone();
    let n = probe.param_count();
    let mut grads = Vec::with_capacity(n);
    for index in 0..n {
        let original = probe.get_flat(index);
        probe.set_flat(index, original + h);
        let plus = loss(&probe);
        probe.set_flat(index, original - h);
        let minus = loss(&probe);
        probe.set_flat(index, original);
        grads.push((plus - minus) / (2.0 * h));
    }
    grads
}

/// Relative gradient error with a floor so exact zeros compare cleanly.
pub fn relative_error(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6)
}
