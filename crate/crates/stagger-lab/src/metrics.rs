//! Instability metrics computed from rollout buffers and reset logs.
//!
//! Everything here is pure aggregation over slices; persistence lives in
//! the runner. Quantities that can be undefined for an update (no episode
//! ended, a block was never visited) stay `Option` all the way to the CSV
//! layer, which writes them as empty fields.

use crate::stagger::ResetEvent;

/// Fraction of valid steps that earned the correct-action reward.
/// `None` when the window contains no valid steps.
pub fn batch_accuracy(rewards: &[f64], valid: &[bool], reward_correct: f64) -> Option<f64> {
    assert_eq!(rewards.len(), valid.len());
    let mut hits = 0usize;
    let mut total = 0usize;
    for (&r, &ok) in rewards.iter().zip(valid) {
        if ok {
            total += 1;
            hits += usize::from(r == reward_correct);
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

/// Rolling accuracy: per-batch by default, optional EMA smoothing when the
/// paper-style "rolling" window should stretch across updates.
#[derive(Debug, Clone)]
pub struct RollingAccuracy {
    ema_alpha: Option<f64>,
    state: Option<f64>,
}

impl RollingAccuracy {
    /// `ema_alpha: None` reports each batch raw; `Some(alpha)` blends
    /// state = alpha * batch + (1 - alpha) * state.
    pub fn new(ema_alpha: Option<f64>) -> Self {
        if let Some(alpha) = ema_alpha {
            assert!((0.0..=1.0).contains(&alpha), "EMA weight outside [0, 1]");
        }
        RollingAccuracy { ema_alpha, state: None }
    }

    pub fn update(&mut self, batch: f64) -> f64 {
        let next = match (self.ema_alpha, self.state) {
            (Some(alpha), Some(prev)) => alpha * batch + (1.0 - alpha) * prev,
            _ => batch,
        };
        self.state = Some(next);
        next
    }

    /// Last reported value, if any batch has been seen.
    pub fn last(&self) -> Option<f64> {
        self.state
    }
}

/// Mean per-step block histogram over the rollout: how many envs sat in
/// each block, averaged across the K steps. Sums to N when every row is
/// valid. Index layout follows the buffer: row i*K + t.
pub fn occupancy_histogram(
    obs: &[usize],
    valid: &[bool],
    num_blocks: usize,
    rollout_len: usize,
) -> Vec<f64> {
    assert_eq!(obs.len(), valid.len());
    assert!(rollout_len > 0);
    assert_eq!(obs.len() % rollout_len, 0);
    let mut counts = vec![0.0f64; num_blocks];
    for (&block, &ok) in obs.iter().zip(valid) {
        if ok {
            assert!(block < num_blocks, "obs {block} outside {num_blocks} blocks");
            counts[block] += 1.0;
        }
    }
    for c in &mut counts {
        *c /= rollout_len as f64;
    }
    counts
}

/// 0.5 * mean squared log-prob drift: a cheap curvature-matched KL proxy.
pub fn approx_kl(log_probs_new: &[f64], log_probs_old: &[f64]) -> f64 {
    assert_eq!(log_probs_new.len(), log_probs_old.len());
    assert!(!log_probs_new.is_empty());
    log_probs_new
        .iter()
        .zip(log_probs_old)
        .map(|(n, o)| {
            let d = n - o;
            0.5 * d * d
        })
        .sum::<f64>()
        / log_probs_new.len() as f64
}

/// Per-block accuracy over one update's valid transitions; blocks with zero
/// visits are `None`.
pub fn per_block_accuracy(
    obs: &[usize],
    rewards: &[f64],
    valid: &[bool],
    reward_correct: f64,
    num_blocks: usize,
) -> Vec<Option<f64>> {
    assert_eq!(obs.len(), rewards.len());
    assert_eq!(obs.len(), valid.len());
    let mut hits = vec![0usize; num_blocks];
    let mut visits = vec![0usize; num_blocks];
    for ((&block, &r), &ok) in obs.iter().zip(rewards).zip(valid) {
        if ok {
            visits[block] += 1;
            hits[block] += usize::from(r == reward_correct);
        }
    }
    hits.iter()
        .zip(&visits)
        .map(|(&h, &v)| (v > 0).then(|| h as f64 / v as f64))
        .collect()
}

/// Running forgetting per block: F(t, b) = max over t' <= t of A(t', b)
/// minus A(t, b), over the updates where A is defined. Always >= 0.
#[derive(Debug, Clone)]
pub struct ForgettingTracker {
    best: Vec<Option<f64>>,
}

impl ForgettingTracker {
    pub fn new(num_blocks: usize) -> Self {
        ForgettingTracker { best: vec![None; num_blocks] }
    }

    /// Feeds one update's per-block accuracies; returns this update's
    /// forgetting per block (`None` where the accuracy is undefined).
    pub fn observe(&mut self, accuracies: &[Option<f64>]) -> Vec<Option<f64>> {
        assert_eq!(accuracies.len(), self.best.len());
        accuracies
            .iter()
            .zip(&mut self.best)
            .map(|(&acc, best)| {
                let acc = acc?;
                let peak = best.map_or(acc, |b| b.max(acc));
                *best = Some(peak);
                Some(peak - acc)
            })
            .collect()
    }
}

/// One metrics.csv row. `success_rate` is `None` when no episode ended at
/// this update's gate.
#[derive(Debug, Clone, Copy)]
pub struct MetricsRow {
    pub update: usize,
    pub rolling_accuracy: f64,
    pub success_rate: Option<f64>,
    pub value_mse: f64,
    pub approx_kl: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Fraction of episodes ending at this gate that finished on the last
/// block; `None` when the gate released no env.
pub fn success_rate(events: &[ResetEvent]) -> Option<f64> {
    if events.is_empty() {
        return None;
    }
    let wins = events.iter().filter(|e| e.was_success).count();
    Some(wins as f64 / events.len() as f64)
}

/// Everything one training run accumulates for persistence and summaries.
#[derive(Debug, Clone, Default)]
pub struct MetricsLedger {
    pub rows: Vec<MetricsRow>,
    /// (update, block, mean env count).
    pub occupancy: Vec<(usize, usize, f64)>,
    /// (update, block, accuracy, forgetting).
    pub forgetting: Vec<(usize, usize, Option<f64>, Option<f64>)>,
    /// (update, env_id, reason).
    pub resets: Vec<(usize, usize, &'static str)>,
}

impl MetricsLedger {
    pub fn record_occupancy(&mut self, update: usize, counts: &[f64]) {
        for (block, &count) in counts.iter().enumerate() {
            self.occupancy.push((update, block, count));
        }
    }

    pub fn record_forgetting(
        &mut self,
        update: usize,
        accuracy: &[Option<f64>],
        forgetting: &[Option<f64>],
    ) {
        assert_eq!(accuracy.len(), forgetting.len());
        for (block, (&acc, &f)) in accuracy.iter().zip(forgetting).enumerate() {
            self.forgetting.push((update, block, acc, f));
        }
    }

    pub fn record_resets(&mut self, update: usize, events: &[ResetEvent]) {
        for e in events {
            self.resets.push((update, e.env_id, e.reason.as_str()));
        }
    }

    /// Mean over every defined forgetting cell in the whole run.
    pub fn mean_forgetting(&self) -> f64 {
        let defined: Vec<f64> = self.forgetting.iter().filter_map(|&(_, _, _, f)| f).collect();
        if defined.is_empty() {
            return 0.0;
        }
        defined.iter().sum::<f64>() / defined.len() as f64
    }

    pub fn peak_value_mse(&self) -> f64 {
        self.rows.iter().map(|r| r.value_mse).fold(0.0, f64::max)
    }

    /// Mean of the defined success rates over the trailing `window` rows
    /// (0.0 when none of them saw an episode end).
    pub fn final_success(&self, window: usize) -> f64 {
        let start = self.rows.len().saturating_sub(window);
        let defined: Vec<f64> = self.rows[start..].iter().filter_map(|r| r.success_rate).collect();
        if defined.is_empty() {
            return 0.0;
        }
        defined.iter().sum::<f64>() / defined.len() as f64
    }

    /// First update whose success rate reaches `threshold`.
    pub fn updates_to_threshold(&self, threshold: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.success_rate.is_some_and(|s| s >= threshold))
            .map(|r| r.update)
    }
}
