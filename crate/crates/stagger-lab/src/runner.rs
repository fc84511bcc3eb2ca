//! Experiment driver: single training runs, the four built-in sweeps,
//! aggregation, and CSV persistence.
//!
//! A run executes entirely in memory and only then touches the filesystem,
//! so a failed run leaves no partial output. Sweep points are independent
//! runs (each owns its seed-keyed streams) and may execute on a worker
//! pool; the output row order is fixed by the job list, not the schedule.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::sync::Mutex;

use thiserror::Error;

use crate::chainworld::{reset, EnvConfig};
use crate::config::{ConfigError, RunConfig};
use crate::metrics::{
    batch_accuracy, occupancy_histogram, per_block_accuracy, success_rate, ForgettingTracker,
    MetricsLedger, MetricsRow, RollingAccuracy,
};
use crate::net::{init_params, NetworkParams};
use crate::ppo::{collect_rollout, update, AdamState, PpoError};
use crate::rng::{Domain, RngStream};
use crate::stagger::{apply_initial_stagger, build_schedule, gate_step, Mode, ScheduleError};

/// Success threshold for the updates-to-threshold summary scalar.
pub const SUCCESS_THRESHOLD: f64 = 0.75;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("update {update}: {source}")]
    Update {
        update: usize,
        #[source]
        source: PpoError,
    },
    #[error("writing outputs: {0}")]
    Io(#[from] std::io::Error),
}

/// Scalars summarizing one run, plus the full per-update ledger.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub final_success: f64,
    pub mean_forgetting: f64,
    pub peak_value_mse: f64,
    pub updates_to_threshold: Option<usize>,
    pub ledger: MetricsLedger,
}

pub struct TrainedRun {
    pub result: RunResult,
    pub params: NetworkParams<f32>,
    pub env: EnvConfig,
}

/// Trains one configuration to completion, in memory.
pub fn run_experiment(config: &RunConfig) -> Result<TrainedRun, RunError> {
    config.validate()?;
    let seed = config.seed;
    let env = config.build_env(seed)?;
    let net_cfg = config.build_net_config(&env);
    let ppo = &config.ppo;
    let n = ppo.num_envs;

    let mut params = init_params::<f32>(net_cfg, seed);
    let mut adam = AdamState::new(params.param_count());
    let mut schedule = build_schedule(
        n,
        env.horizon,
        ppo.rollout_len as u32,
        config.schedule.num_groups.map(|g| g as u32),
        config.schedule.mode,
    )?;

    let stream = |domain: Domain| -> Vec<RngStream> {
        (0..n as u64).map(|i| RngStream::new(seed, domain, i)).collect()
    };
    let mut reset_rngs = stream(Domain::EnvReset);
    let mut step_rngs = stream(Domain::EnvStep);
    let mut sample_rngs = stream(Domain::PolicySample);
    let mut stagger_rngs = stream(Domain::StaggerActions);
    let mut shuffle_rng = RngStream::new(seed, Domain::Shuffle, 0);

    let mut states: Vec<_> =
        reset_rngs.iter_mut().map(|rng| reset(&env, rng)).collect();
    apply_initial_stagger(&env, &mut states, &mut schedule, &mut step_rngs, &mut stagger_rngs);

    let num_blocks = env.num_blocks as usize;
    let mut ledger = MetricsLedger::default();
    let mut rolling = RollingAccuracy::new(config.metrics.rolling_ema_alpha);
    let mut tracker = ForgettingTracker::new(num_blocks);

    for update_index in 1..=ppo.total_updates {
        let buffer = collect_rollout(
            &params,
            &env,
            &mut states,
            &mut schedule,
            ppo.rollout_len,
            &mut sample_rngs,
            &mut step_rngs,
        );

        let occupancy =
            occupancy_histogram(&buffer.obs, &buffer.valid, num_blocks, ppo.rollout_len);
        ledger.record_occupancy(update_index, &occupancy);

        let block_acc = per_block_accuracy(
            &buffer.obs,
            &buffer.rewards,
            &buffer.valid,
            env.reward_correct,
            num_blocks,
        );
        let forgetting = tracker.observe(&block_acc);
        ledger.record_forgetting(update_index, &block_acc, &forgetting);

        let rolling_accuracy =
            match batch_accuracy(&buffer.rewards, &buffer.valid, env.reward_correct) {
                Some(acc) => rolling.update(acc),
                None => rolling.last().unwrap_or(0.0),
            };

        let stats = update(&mut params, &mut adam, &buffer, ppo, &mut shuffle_rng)
            .map_err(|source| RunError::Update { update: update_index, source })?;

        let events = gate_step(&env, &mut states, &mut schedule, &mut reset_rngs);
        ledger.record_resets(update_index, &events);

        ledger.rows.push(MetricsRow {
            update: update_index,
            rolling_accuracy,
            success_rate: success_rate(&events),
            value_mse: stats.value_mse,
            approx_kl: stats.approx_kl,
            entropy: stats.entropy,
            clip_fraction: stats.clip_fraction,
        });
    }

    let window = (env.horizon as usize).div_ceil(ppo.rollout_len);
    let result = RunResult {
        final_success: ledger.final_success(window),
        mean_forgetting: ledger.mean_forgetting(),
        peak_value_mse: ledger.peak_value_mse(),
        updates_to_threshold: ledger.updates_to_threshold(SUCCESS_THRESHOLD),
        ledger,
    };
    Ok(TrainedRun { result, params, env })
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// metrics.csv text for a finished run.
pub fn metrics_csv(ledger: &MetricsLedger) -> String {
    let mut out = String::from(
        "update,rolling_accuracy,success_rate,value_mse,approx_kl,entropy,clip_fraction\n",
    );
    for row in &ledger.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.update,
            row.rolling_accuracy,
            fmt_opt_f64(row.success_rate),
            row.value_mse,
            row.approx_kl,
            row.entropy,
            row.clip_fraction
        ));
    }
    out
}

pub fn occupancy_csv(ledger: &MetricsLedger) -> String {
    let mut out = String::from("update,block,count\n");
    for &(update, block, count) in &ledger.occupancy {
        out.push_str(&format!("{update},{block},{count}\n"));
    }
    out
}

pub fn forgetting_csv(ledger: &MetricsLedger) -> String {
    let mut out = String::from("update,block,accuracy,forgetting\n");
    for &(update, block, acc, f) in &ledger.forgetting {
        out.push_str(&format!("{update},{block},{},{}\n", fmt_opt_f64(acc), fmt_opt_f64(f)));
    }
    out
}

pub fn resets_csv(ledger: &MetricsLedger) -> String {
    let mut out = String::from("update,env_id,reason\n");
    for &(update, env_id, reason) in &ledger.resets {
        out.push_str(&format!("{update},{env_id},{reason}\n"));
    }
    out
}

/// Writes the four run CSVs plus the config echo (and optionally the
/// trained parameters) into `dir`, creating it if needed.
pub fn write_run_outputs(
    dir: &Path,
    config: &RunConfig,
    trained: &TrainedRun,
    save_params: bool,
) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(&trained.result.ledger))?;
    std::fs::write(dir.join("occupancy.csv"), occupancy_csv(&trained.result.ledger))?;
    std::fs::write(dir.join("forgetting.csv"), forgetting_csv(&trained.result.ledger))?;
    std::fs::write(dir.join("resets.csv"), resets_csv(&trained.result.ledger))?;
    std::fs::write(dir.join("config.json"), config.echo_json())?;
    if save_params {
        crate::checkpoint::save(&trained.params, &dir.join("params.bin"))
            .map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Horizon,
    Homogeneity,
    Gating,
    Granularity,
}

impl SweepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepKind::Horizon => "horizon",
            SweepKind::Homogeneity => "homogeneity",
            SweepKind::Gating => "gating",
            SweepKind::Granularity => "granularity",
        }
    }

    pub const ALL: [SweepKind; 4] =
        [SweepKind::Horizon, SweepKind::Homogeneity, SweepKind::Gating, SweepKind::Granularity];
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SweepKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "horizon" => Ok(SweepKind::Horizon),
            "homogeneity" => Ok(SweepKind::Homogeneity),
            "gating" => Ok(SweepKind::Gating),
            "granularity" => Ok(SweepKind::Granularity),
            other => Err(format!(
                "unknown sweep kind {other:?}, expected horizon | homogeneity | gating | granularity"
            )),
        }
    }
}

/// One summary.csv row.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub sweep_kind: String,
    pub x_value: f64,
    pub mode: Mode,
    pub seed: u64,
    pub final_success: f64,
    pub mean_forgetting: f64,
    pub peak_value_mse: f64,
    pub updates_to_threshold: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct FailureRow {
    pub sweep_kind: String,
    pub x_value: f64,
    pub mode: Mode,
    pub seed: u64,
    pub error: String,
}

pub struct SweepOutcome {
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<FailureRow>,
}

struct GridPoint {
    x_value: f64,
    horizon: u32,
    progression_prob: f64,
    reset_lambda: f64,
    num_groups: Option<usize>,
}

/// The four built-in grids. Each point fixes (H, p, lambda) and optionally
/// the staggered group count; everything else comes from the base config.
fn grid(kind: SweepKind) -> Vec<GridPoint> {
    let point = |x_value, horizon, progression_prob, reset_lambda, num_groups| GridPoint {
        x_value,
        horizon,
        progression_prob,
        reset_lambda,
        num_groups,
    };
    match kind {
        SweepKind::Horizon => [50u32, 100, 200, 300, 400, 500]
            .iter()
            .map(|&h| point(h as f64, h, 0.5, 0.0, None))
            .collect(),
        // x-axis is the homogeneity score 2 - lambda, computed exactly.
        SweepKind::Homogeneity => (0..=10)
            .map(|i| point((20 - i) as f64 / 10.0, 50, 1.0, i as f64 / 10.0, None))
            .collect(),
        SweepKind::Gating => (0..=10).map(|i| point(i as f64 / 10.0, 200, i as f64 / 10.0, 0.0, None)).collect(),
        SweepKind::Granularity => {
            [1usize, 2, 5, 10, 20, 40].iter().map(|&nb| point(nb as f64, 200, 0.5, 0.0, Some(nb))).collect()
        }
    }
}

/// Largest block count any point of the grid needs, so one embedding table
/// serves the whole sweep.
fn grid_max_blocks(kind: SweepKind, block_length: u32) -> usize {
    grid(kind).iter().map(|p| (p.horizon / block_length) as usize).max().expect("nonempty grid")
}

struct SweepJob {
    x_value: f64,
    mode: Mode,
    seed: u64,
    config: RunConfig,
}

/// Builds the full job list: every grid point x both modes x `num_seeds`
/// paired seeds. Naive runs ignore the granularity override (a reset gate
/// with groups is meaningless there) and serve as the shared control.
fn sweep_jobs(kind: SweepKind, base: &RunConfig, num_seeds: u64) -> Vec<SweepJob> {
    let embed_rows = grid_max_blocks(kind, base.env.block_length);
    let mut jobs = Vec::new();
    for p in grid(kind) {
        for mode in [Mode::Naive, Mode::Staggered] {
            for k in 0..num_seeds {
                let mut config = base.clone();
                config.env.horizon = p.horizon;
                config.env.progression_prob = p.progression_prob;
                config.env.reset_lambda = p.reset_lambda;
                config.env.num_blocks = None;
                config.net.embed_rows = Some(embed_rows.max(config.net.embed_rows.unwrap_or(0)));
                config.schedule.mode = mode;
                config.schedule.num_groups = match mode {
                    Mode::Staggered => p.num_groups,
                    Mode::Naive => None,
                };
                config.seed = base.seed.wrapping_add(k);
                jobs.push(SweepJob { x_value: p.x_value, mode, seed: config.seed, config });
            }
        }
    }
    jobs
}

/// Runs a sweep on up to `threads` workers. Failed runs land in
/// `failures` and the sweep continues; row order is the job order.
pub fn run_sweep(kind: SweepKind, base: &RunConfig, num_seeds: u64, threads: usize) -> SweepOutcome {
    let jobs = sweep_jobs(kind, base, num_seeds);
    let total = jobs.len();
    let results: Mutex<Vec<Option<Result<RunResult, String>>>> = Mutex::new((0..total).map(|_| None).collect());
    let queue: Mutex<usize> = Mutex::new(0);

    let workers = threads.clamp(1, total.max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = {
                    let mut next = queue.lock().expect("queue lock");
                    if *next >= total {
                        return;
                    }
                    let i = *next;
                    *next += 1;
                    i
                };
                let outcome = run_experiment(&jobs[index].config)
                    .map(|trained| trained.result)
                    .map_err(|e| e.to_string());
                results.lock().expect("results lock")[index] = Some(outcome);
            });
        }
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let collected = results.into_inner().expect("scope joined all workers");
    for (job, outcome) in jobs.iter().zip(collected) {
        match outcome.expect("every job ran") {
            Ok(result) => rows.push(SummaryRow {
                sweep_kind: kind.as_str().to_string(),
                x_value: job.x_value,
                mode: job.mode,
                seed: job.seed,
                final_success: result.final_success,
                mean_forgetting: result.mean_forgetting,
                peak_value_mse: result.peak_value_mse,
                updates_to_threshold: result.updates_to_threshold,
            }),
            Err(error) => failures.push(FailureRow {
                sweep_kind: kind.as_str().to_string(),
                x_value: job.x_value,
                mode: job.mode,
                seed: job.seed,
                error,
            }),
        }
    }
    SweepOutcome { rows, failures }
}

pub const SUMMARY_HEADER: &str =
    "sweep_kind,x_value,mode,seed,final_success,mean_forgetting,peak_value_mse,updates_to_threshold";

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.sweep_kind,
            r.x_value,
            r.mode,
            r.seed,
            r.final_success,
            r.mean_forgetting,
            r.peak_value_mse,
            fmt_opt_usize(r.updates_to_threshold)
        ));
    }
    out
}

fn failures_csv(failures: &[FailureRow]) -> String {
    let mut out = String::from("sweep_kind,x_value,mode,seed,error\n");
    for f in failures {
        // Error text is quoted; embedded quotes double per CSV convention.
        let quoted = f.error.replace('"', "\"\"");
        out.push_str(&format!("{},{},{},{},\"{}\"\n", f.sweep_kind, f.x_value, f.mode, f.seed, quoted));
    }
    out
}

/// Persists a sweep: summary.csv, aggregate.csv, the config echo, and
/// failures.csv when anything failed.
pub fn write_sweep_outputs(dir: &Path, base: &RunConfig, outcome: &SweepOutcome) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("summary.csv"), summary_csv(&outcome.rows))?;
    std::fs::write(dir.join("aggregate.csv"), aggregate_csv(&aggregate(&outcome.rows)))?;
    std::fs::write(dir.join("config.json"), base.echo_json())?;
    if !outcome.failures.is_empty() {
        std::fs::write(dir.join("failures.csv"), failures_csv(&outcome.failures))?;
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum SummaryParseError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: bad {field}: {value:?}")]
    BadField { row: usize, field: &'static str, value: String },
    #[error("header mismatch: expected {SUMMARY_HEADER:?}")]
    BadHeader,
}

/// Strict reader for summary.csv text.
pub fn parse_summary_csv(text: &str) -> Result<Vec<SummaryRow>, SummaryParseError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    {
        let headers = reader.headers()?;
        let expected: Vec<&str> = SUMMARY_HEADER.split(',').collect();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(SummaryParseError::BadHeader);
        }
    }
    let mut rows = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let record = record?;
        let row = index + 2; // 1-based, after the header line
        let field = |i: usize, name: &'static str| -> Result<&str, SummaryParseError> {
            record.get(i).ok_or(SummaryParseError::BadField {
                row,
                field: name,
                value: String::from("<missing>"),
            })
        };
        let bad = |name: &'static str, value: &str| SummaryParseError::BadField {
            row,
            field: name,
            value: value.to_string(),
        };
        let parse_f64 = |name: &'static str, value: &str| -> Result<f64, SummaryParseError> {
            let v: f64 = value.parse().map_err(|_| bad(name, value))?;
            if !v.is_finite() {
                return Err(bad(name, value));
            }
            Ok(v)
        };

        let mode: Mode = field(2, "mode")?.parse().map_err(|_| bad("mode", field(2, "mode").unwrap_or("")))?;
        let threshold_text = field(7, "updates_to_threshold")?;
        let updates_to_threshold = if threshold_text.is_empty() {
            None
        } else {
            Some(threshold_text.parse().map_err(|_| bad("updates_to_threshold", threshold_text))?)
        };
        rows.push(SummaryRow {
            sweep_kind: field(0, "sweep_kind")?.to_string(),
            x_value: parse_f64("x_value", field(1, "x_value")?)?,
            mode,
            seed: field(3, "seed")?.parse().map_err(|_| bad("seed", field(3, "seed").unwrap_or("")))?,
            final_success: parse_f64("final_success", field(4, "final_success")?)?,
            mean_forgetting: parse_f64("mean_forgetting", field(5, "mean_forgetting")?)?,
            peak_value_mse: parse_f64("peak_value_mse", field(6, "peak_value_mse")?)?,
            updates_to_threshold,
        });
    }
    Ok(rows)
}

/// Sample mean and sample standard deviation (n-1 denominator; 0 for a
/// single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    assert!(!values.is_empty());
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One aggregate.csv row: per (sweep point, mode) statistics over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub sweep_kind: String,
    pub x_value: f64,
    pub mode: Mode,
    pub seeds: usize,
    pub final_success_mean: f64,
    pub final_success_std: f64,
    pub mean_forgetting_mean: f64,
    pub mean_forgetting_std: f64,
    pub peak_value_mse_mean: f64,
    pub peak_value_mse_std: f64,
    /// Seeds that reached the success threshold at all.
    pub threshold_hits: usize,
    pub updates_to_threshold_mean: Option<f64>,
    pub updates_to_threshold_std: Option<f64>,
}

/// Groups summary rows by (kind, x, mode) and reduces each group to
/// mean +- sample std. Group order follows first appearance in the input,
/// so re-aggregating a summary file is stable.
pub fn aggregate(rows: &[SummaryRow]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, u64, Mode)> = Vec::new();
    let mut groups: std::collections::HashMap<(String, u64, Mode), Vec<&SummaryRow>> =
        std::collections::HashMap::new();
    for row in rows {
        let key = (row.sweep_kind.clone(), row.x_value.to_bits(), row.mode);
        let entry = groups.entry(key.clone()).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push(row);
    }

    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let collect = |f: fn(&SummaryRow) -> f64| -> Vec<f64> { members.iter().map(|r| f(r)).collect() };
            let (fs_mean, fs_std) = mean_std(&collect(|r| r.final_success));
            let (mf_mean, mf_std) = mean_std(&collect(|r| r.mean_forgetting));
            let (pv_mean, pv_std) = mean_std(&collect(|r| r.peak_value_mse));
            let hits: Vec<f64> = members
                .iter()
                .filter_map(|r| r.updates_to_threshold.map(|u| u as f64))
                .collect();
            let (utt_mean, utt_std) = if hits.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&hits);
                (Some(m), Some(s))
            };
            AggregateRow {
                sweep_kind: members[0].sweep_kind.clone(),
                x_value: members[0].x_value,
                mode: members[0].mode,
                seeds: members.len(),
                final_success_mean: fs_mean,
                final_success_std: fs_std,
                mean_forgetting_mean: mf_mean,
                mean_forgetting_std: mf_std,
                peak_value_mse_mean: pv_mean,
                peak_value_mse_std: pv_std,
                threshold_hits: hits.len(),
                updates_to_threshold_mean: utt_mean,
                updates_to_threshold_std: utt_std,
            }
        })
        .collect()
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(
        "sweep_kind,x_value,mode,seeds,final_success_mean,final_success_std,\
         mean_forgetting_mean,mean_forgetting_std,peak_value_mse_mean,peak_value_mse_std,\
         threshold_hits,updates_to_threshold_mean,updates_to_threshold_std\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.sweep_kind,
            r.x_value,
            r.mode,
            r.seeds,
            r.final_success_mean,
            r.final_success_std,
            r.mean_forgetting_mean,
            r.mean_forgetting_std,
            r.peak_value_mse_mean,
            r.peak_value_mse_std,
            r.threshold_hits,
            fmt_opt_f64(r.updates_to_threshold_mean),
            fmt_opt_f64(r.updates_to_threshold_std)
        ));
    }
    out
}

/// Re-aggregates an existing sweep directory from its summary.csv and
/// rewrites aggregate.csv. Returns the aggregate rows. Idempotent.
pub fn report(dir: &Path) -> Result<Vec<AggregateRow>, ReportError> {
    let summary_path = dir.join("summary.csv");
    let text = std::fs::read_to_string(&summary_path)
        .map_err(|e| ReportError::Io(summary_path.display().to_string(), e))?;
    let rows = parse_summary_csv(&text)?;
    let agg = aggregate(&rows);
    let out_path = dir.join("aggregate.csv");
    let mut file = std::fs::File::create(&out_path)
        .map_err(|e| ReportError::Io(out_path.display().to_string(), e))?;
    file.write_all(aggregate_csv(&agg).as_bytes())
        .map_err(|e| ReportError::Io(out_path.display().to_string(), e))?;
    Ok(agg)
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error(transparent)]
    Parse(#[from] SummaryParseError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    /// A config small enough to train in well under a second.
    fn mini_config() -> RunConfig {
        parse_config(
            r#"{
                "env": {"horizon_H": 20, "block_length_L": 5, "num_actions_Ac": 4,
                        "progression_prob_p": 1.0},
                "ppo": {"num_envs_N": 8, "rollout_K": 5, "total_updates": 6,
                        "epochs": 2, "num_minibatches": 2},
                "net": {"embed_dim": 8, "hidden_dim": 16, "hidden_layers": 2},
                "seed": 5
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn mini_run_produces_full_ledger() {
        let trained = run_experiment(&mini_config()).unwrap();
        let ledger = &trained.result.ledger;
        assert_eq!(ledger.rows.len(), 6);
        // 4 blocks x 6 updates of occupancy and forgetting rows.
        assert_eq!(ledger.occupancy.len(), 24);
        assert_eq!(ledger.forgetting.len(), 24);
        assert!(trained.result.peak_value_mse > 0.0);
        assert!(trained.params.all_finite());
        // Staggered groups: ceil(20/5) = 4 groups of 2; one group hits the
        // horizon each update, so resets appear from update 1 on.
        assert_eq!(ledger.resets.iter().filter(|r| r.0 == 1).count(), 2);
        assert!(ledger.rows.iter().all(|r| r.success_rate.is_some()));
    }

    #[test]
    fn same_config_same_bytes() {
        let a = run_experiment(&mini_config()).unwrap();
        let b = run_experiment(&mini_config()).unwrap();
        assert_eq!(metrics_csv(&a.result.ledger), metrics_csv(&b.result.ledger));
        assert_eq!(occupancy_csv(&a.result.ledger), occupancy_csv(&b.result.ledger));
        assert_eq!(forgetting_csv(&a.result.ledger), forgetting_csv(&b.result.ledger));
        assert_eq!(resets_csv(&a.result.ledger), resets_csv(&b.result.ledger));

        let mut other_seed = mini_config();
        other_seed.seed = 6;
        let c = run_experiment(&other_seed).unwrap();
        assert_ne!(metrics_csv(&a.result.ledger), metrics_csv(&c.result.ledger));
    }

    #[test]
    fn run_outputs_land_in_the_directory() {
        let trained = run_experiment(&mini_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        write_run_outputs(&out, &mini_config(), &trained, true).unwrap();
        for name in ["metrics.csv", "occupancy.csv", "forgetting.csv", "resets.csv", "config.json", "params.bin"]
        {
            assert!(out.join(name).exists(), "{name} missing");
        }
        // The echo parses back to the exact config.
        let echoed = crate::config::load_config(&out.join("config.json")).unwrap();
        assert_eq!(echoed, mini_config());
        // The checkpoint holds the trained parameters.
        let loaded = crate::checkpoint::load(&out.join("params.bin")).unwrap();
        assert_eq!(loaded, trained.params);
    }

    #[test]
    fn csv_headers_match_the_contract() {
        let ledger = MetricsLedger::default();
        assert!(metrics_csv(&ledger).starts_with(
            "update,rolling_accuracy,success_rate,value_mse,approx_kl,entropy,clip_fraction\n"
        ));
        assert!(occupancy_csv(&ledger).starts_with("update,block,count\n"));
        assert!(forgetting_csv(&ledger).starts_with("update,block,accuracy,forgetting\n"));
        assert!(resets_csv(&ledger).starts_with("update,env_id,reason\n"));
    }

    #[test]
    fn grids_have_the_published_shapes() {
        let horizon = grid(SweepKind::Horizon);
        assert_eq!(horizon.iter().map(|p| p.horizon).collect::<Vec<_>>(), vec![50, 100, 200, 300, 400, 500]);
        assert!(horizon.iter().all(|p| p.progression_prob == 0.5 && p.reset_lambda == 0.0));

        let homogeneity = grid(SweepKind::Homogeneity);
        assert_eq!(homogeneity.len(), 11);
        assert_eq!(homogeneity[0].x_value, 2.0);
        assert_eq!(homogeneity[10].x_value, 1.0);
        assert_eq!(homogeneity[3].x_value, 1.7);
        assert!(homogeneity.iter().all(|p| p.horizon == 50 && p.progression_prob == 1.0));

        let gating = grid(SweepKind::Gating);
        assert_eq!(gating.len(), 11);
        assert_eq!(gating[0].progression_prob, 0.0);
        assert_eq!(gating[10].progression_prob, 1.0);

        let granularity = grid(SweepKind::Granularity);
        assert_eq!(granularity.iter().map(|p| p.num_groups).collect::<Vec<_>>(),
            vec![Some(1), Some(2), Some(5), Some(10), Some(20), Some(40)]);
    }

    #[test]
    fn sweep_jobs_pair_seeds_across_modes() {
        let base = RunConfig::default();
        let jobs = sweep_jobs(SweepKind::Homogeneity, &base, 3);
        // 11 points x 2 modes x 3 seeds.
        assert_eq!(jobs.len(), 66);
        // For each (x, seed) the two modes carry identical env settings.
        for chunk in jobs.chunks(6) {
            let naive = &chunk[0];
            let staggered = &chunk[3];
            assert_eq!(naive.mode, Mode::Naive);
            assert_eq!(staggered.mode, Mode::Staggered);
            assert_eq!(naive.seed, staggered.seed);
            assert_eq!(naive.config.env, staggered.config.env);
        }
        // Homogeneity grid uses the x = 2 - lambda export.
        assert_eq!(jobs[0].x_value, 2.0);
        assert_eq!(jobs[0].config.env.reset_lambda, 0.0);
        let last = jobs.last().unwrap();
        assert_eq!(last.x_value, 1.0);
        assert_eq!(last.config.env.reset_lambda, 1.0);
        // Horizon sweep sizes the embedding for its largest grid point.
        let jobs = sweep_jobs(SweepKind::Horizon, &base, 1);
        assert!(jobs.iter().all(|j| j.config.net.embed_rows == Some(100)));
    }

    fn tiny_sweep_base() -> RunConfig {
        parse_config(
            r#"{
                "env": {"num_actions_Ac": 4},
                "ppo": {"num_envs_N": 4, "rollout_K": 5, "total_updates": 2,
                        "epochs": 1, "num_minibatches": 2},
                "net": {"embed_dim": 4, "hidden_dim": 8, "hidden_layers": 1},
                "seed": 3
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn granularity_sweep_single_group_matches_naive() {
        let outcome = run_sweep(SweepKind::Granularity, &tiny_sweep_base(), 2, 2);
        assert!(outcome.failures.is_empty(), "failures: {:?}", outcome.failures.first().map(|f| &f.error));
        assert_eq!(outcome.rows.len(), 6 * 2 * 2);
        // N_B = 1 staggered is the same schedule as naive: identical scalars
        // under the shared seed.
        for seed in [3u64, 4] {
            let at = |mode: Mode| {
                outcome
                    .rows
                    .iter()
                    .find(|r| r.x_value == 1.0 && r.mode == mode && r.seed == seed)
                    .expect("row present")
            };
            let naive = at(Mode::Naive);
            let staggered = at(Mode::Staggered);
            assert_eq!(naive.final_success, staggered.final_success);
            assert_eq!(naive.mean_forgetting, staggered.mean_forgetting);
            assert_eq!(naive.peak_value_mse, staggered.peak_value_mse);
        }
    }

    #[test]
    fn summary_round_trips_through_csv() {
        let rows = vec![
            SummaryRow {
                sweep_kind: "gating".into(),
                x_value: 0.3,
                mode: Mode::Naive,
                seed: 0,
                final_success: 0.25,
                mean_forgetting: 0.125,
                peak_value_mse: 81.5,
                updates_to_threshold: None,
            },
            SummaryRow {
                sweep_kind: "gating".into(),
                x_value: 0.3,
                mode: Mode::Staggered,
                seed: 1,
                final_success: 1.0 / 3.0,
                mean_forgetting: 1e-9,
                peak_value_mse: 2.4999999999,
                updates_to_threshold: Some(17),
            },
        ];
        let text = summary_csv(&rows);
        let parsed = parse_summary_csv(&text).unwrap();
        assert_eq!(parsed, rows);
    }

    #[test]
    fn summary_parser_rejects_malformed_input() {
        assert!(matches!(parse_summary_csv("a,b\n1,2\n"), Err(SummaryParseError::BadHeader)));
        let mut bad_mode = String::from(SUMMARY_HEADER);
        bad_mode.push_str("\ngating,0.3,sideways,0,0.1,0.1,0.1,\n");
        assert!(matches!(parse_summary_csv(&bad_mode), Err(SummaryParseError::BadField { field: "mode", .. })));
        let mut bad_float = String::from(SUMMARY_HEADER);
        bad_float.push_str("\ngating,0.3,naive,0,NaN,0.1,0.1,\n");
        assert!(parse_summary_csv(&bad_float).is_err());
    }

    #[test]
    fn mean_std_matches_two_pass_reference() {
        let (m, s) = mean_std(&[0.2, 0.4]);
        assert!((m - 0.3).abs() < 1e-15);
        assert!((s - 0.1414213562373095).abs() < 1e-12);
        let (m, s) = mean_std(&[7.5]);
        assert_eq!((m, s), (7.5, 0.0));

        let mut rng = crate::rng::RngStream::new(11, Domain::Shuffle, 2);
        let values: Vec<f64> = (0..257).map(|_| rng.next_f64() * 10.0 - 5.0).collect();
        let (m, s) = mean_std(&values);
        let mean_ref = values.iter().sum::<f64>() / values.len() as f64;
        let var_ref =
            values.iter().map(|v| (v - mean_ref) * (v - mean_ref)).sum::<f64>() / (values.len() - 1) as f64;
        assert!((m - mean_ref).abs() < 1e-12);
        assert!((s - var_ref.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn aggregate_groups_by_point_and_mode() {
        let row = |x: f64, mode: Mode, seed: u64, fs: f64, utt: Option<usize>| SummaryRow {
            sweep_kind: "horizon".into(),
            x_value: x,
            mode,
            seed,
            final_success: fs,
            mean_forgetting: 0.1,
            peak_value_mse: 1.0,
            updates_to_threshold: utt,
        };
        let rows = vec![
            row(50.0, Mode::Naive, 0, 0.2, None),
            row(50.0, Mode::Naive, 1, 0.4, Some(100)),
            row(50.0, Mode::Staggered, 0, 0.9, Some(20)),
            row(50.0, Mode::Staggered, 1, 1.0, Some(30)),
            row(100.0, Mode::Naive, 0, 0.5, None),
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 3);
        assert_eq!(agg[0].seeds, 2);
        assert!((agg[0].final_success_mean - 0.3).abs() < 1e-15);
        assert_eq!(agg[0].threshold_hits, 1);
        assert_eq!(agg[0].updates_to_threshold_mean, Some(100.0));
        assert_eq!(agg[1].updates_to_threshold_mean, Some(25.0));
        assert_eq!(agg[2].seeds, 1);
        assert_eq!(agg[2].final_success_std, 0.0);
        assert_eq!(agg[2].updates_to_threshold_mean, None);
    }

    #[test]
    fn report_is_idempotent() {
        let rows = vec![SummaryRow {
            sweep_kind: "gating".into(),
            x_value: 0.5,
            mode: Mode::Staggered,
            seed: 0,
            final_success: 0.5,
            mean_forgetting: 0.01,
            peak_value_mse: 3.5,
            updates_to_threshold: Some(40),
        }];
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("summary.csv"), summary_csv(&rows)).unwrap();
        let first = report(dir.path()).unwrap();
        let bytes_first = std::fs::read(dir.path().join("aggregate.csv")).unwrap();
        let second = report(dir.path()).unwrap();
        let bytes_second = std::fs::read(dir.path().join("aggregate.csv")).unwrap();
        assert_eq!(first, second);
        assert_eq!(bytes_first, bytes_second);
        assert!(report(&dir.path().join("missing")).is_err());
    }
}
