//! Acceptance gate: ten checks covering numerical oracles, schedule
//! arithmetic, learning-dynamics comparisons, CLI determinism, and the
//! single-core throughput floor.
//!
//! Each test prints exactly one `acceptance NN <name>: PASS|FAIL` line
//! (visible under `--nocapture`). The heavy checks serialize on a global
//! lock so wall-clock assertions are measured on an uncontended core.
//! Expect the full suite to take roughly half an hour.

mod common;

use std::collections::BTreeSet;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use stagger_lab::chainworld::reset;
use stagger_lab::config::RunConfig;
use stagger_lab::net::{init_params, NetworkConfig, NetworkParams};
use stagger_lab::ppo::{
    collect_rollout, compute_gae, minibatch_loss_and_grads, update, AdamState, Minibatch,
};
use stagger_lab::rng::{Domain, RngStream};
use stagger_lab::runner::{mean_std, resets_csv, run_experiment, RunResult};
use stagger_lab::stagger::{apply_initial_stagger, build_schedule, gate_step, Mode};

use common::{brute_force_gae, fd_gradient, random_buffer, relative_error};

/// Serializes the compute-heavy criteria so their timing bounds are
/// measured one at a time.
fn heavy_lock() -> MutexGuard<'static, ()> {
    static GATE: OnceLock<Mutex<()>> = OnceLock::new();
    let gate = GATE.get_or_init(|| Mutex::new(()));
    gate.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn verdict(name: &str, check: impl FnOnce() -> Result<(), String>) {
    match check() {
        Ok(()) => println!("acceptance {name}: PASS"),
        Err(why) => {
            println!("acceptance {name}: FAIL ({why})");
            panic!("acceptance {name}: {why}");
        }
    }
}

fn ensure(condition: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if condition {
        Ok(())
    } else {
        Err(why())
    }
}

/// Table-scale toy config with the handful of knobs the criteria vary.
fn toy_config(horizon: u32, progression_prob: f64, mode: Mode, num_groups: Option<usize>, seed: u64) -> RunConfig {
    let mut config = RunConfig::default();
    config.env.horizon = horizon;
    config.env.progression_prob = progression_prob;
    config.schedule.mode = mode;
    config.schedule.num_groups = num_groups;
    config.seed = seed;
    config.validate().expect("criterion config is valid");
    config
}

fn paired_results(
    horizon: u32,
    progression_prob: f64,
    seeds: std::ops::Range<u64>,
) -> (Vec<RunResult>, Vec<RunResult>) {
    let run = |mode: Mode, seed: u64| {
        run_experiment(&toy_config(horizon, progression_prob, mode, None, seed))
            .expect("training run completes")
            .result
    };
    let naive: Vec<RunResult> = seeds.clone().map(|s| run(Mode::Naive, s)).collect();
    let staggered: Vec<RunResult> = seeds.map(|s| run(Mode::Staggered, s)).collect();
    (naive, staggered)
}

#[test]
fn criterion_01_gae_matches_brute_force_expansion() {
    verdict("01 gae-oracle", || {
        let started = Instant::now();
        let mut rng = RngStream::new(2024, Domain::Shuffle, 101);
        for instance in 0..200 {
            let num_envs = 1 + rng.range(8);
            let rollout_len = 1 + rng.range(10);
            let gamma = 0.8 + 0.2 * rng.next_f64();
            let lambda = 0.8 + 0.2 * rng.next_f64();
            let buffer = random_buffer(&mut rng, num_envs, rollout_len);
            let (adv, ret) = compute_gae(&buffer, gamma, lambda);
            let (adv_ref, ret_ref) = brute_force_gae(&buffer, gamma, lambda);
            for row in 0..buffer.len() {
                ensure((adv[row] - adv_ref[row]).abs() <= 1e-10, || {
                    format!("instance {instance} row {row}: advantage {} vs oracle {}", adv[row], adv_ref[row])
                })?;
                ensure((ret[row] - ret_ref[row]).abs() <= 1e-10, || {
                    format!("instance {instance} row {row}: return {} vs oracle {}", ret[row], ret_ref[row])
                })?;
            }
        }
        let elapsed = started.elapsed();
        ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}, budget 1s"))
    });
}

#[test]
fn criterion_02_gradients_match_finite_differences() {
    let _guard = heavy_lock();
    verdict("02 gradient-check", || {
        let started = Instant::now();
        for separate_value_net in [false, true] {
            let cfg = NetworkConfig {
                embed_rows: 4,
                embed_dim: 8,
                hidden_dim: 8,
                hidden_layers: 2,
                num_actions: 5,
                separate_value_net,
            };
            let params: NetworkParams<f64> = init_params(cfg, 42);

            let rows = 16;
            let mut rng = RngStream::new(42, Domain::Shuffle, 7);
            let obs: Vec<usize> = (0..rows).map(|_| rng.range(4)).collect();
            let actions: Vec<usize> = (0..rows).map(|_| rng.range(5)).collect();
            // Old log-probs offset from the current policy by fixed amounts so
            // the batch mixes clipped and unclipped samples while every ratio
            // stays far from the clip boundary relative to the FD step.
            let (log_probs_now, _, values_now) =
                stagger_lab::net::evaluate_actions(&params, &obs, &actions);
            let offsets = [-0.25, -0.1, 0.05, 0.2];
            let log_probs_old: Vec<f64> =
                log_probs_now.iter().enumerate().map(|(i, lp)| lp + offsets[i % offsets.len()]).collect();
            let advantages: Vec<f64> = (0..rows).map(|i| ((i % 5) as f64 - 2.0) * 0.7 + 0.05).collect();
            let returns: Vec<f64> =
                values_now.iter().enumerate().map(|(i, v)| v + ((i % 3) as f64 - 1.0) * 0.8).collect();
            let mb = Minibatch {
                obs: &obs,
                actions: &actions,
                log_probs_old: &log_probs_old,
                advantages: &advantages,
                returns: &returns,
            };

            // The loss is linear in the two coefficients, so these four points
            // pin the policy, value, and entropy gradient components.
            let components: [(&str, f64, f64); 4] = [
                ("policy", 0.0, 0.0),
                ("policy+value", 1.0, 0.0),
                ("policy+entropy", 0.0, 1.0),
                ("combined", 0.5, 0.01),
            ];
            for (label, vf_coef, ent_coef) in components {
                let (_, analytic, _) = minibatch_loss_and_grads(&params, &mb, 0.2, vf_coef, ent_coef);
                let fd = fd_gradient(&params, 1e-5, |p| {
                    minibatch_loss_and_grads(p, &mb, 0.2, vf_coef, ent_coef).0
                });
                for (index, &fd_value) in fd.iter().enumerate() {
                    let an = analytic.get_flat(index);
                    let err = relative_error(fd_value, an);
                    ensure(err < 1e-4, || {
                        format!(
                            "{label} (separate={separate_value_net}): param {index} \
                             fd {fd_value} vs analytic {an} (rel err {err:.3e})"
                        )
                    })?;
                }
            }
        }
        let elapsed = started.elapsed();
        ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}, budget 30s"))
    });
}

/// Occupancy argmax per update, derived from the run ledger.
fn argmax_trace(result: &RunResult, total_updates: usize, num_blocks: usize) -> Vec<usize> {
    let mut trace = vec![0usize; total_updates];
    let mut best = vec![f64::NEG_INFINITY; total_updates];
    for &(update, block, count) in &result.ledger.occupancy {
        assert!((1..=total_updates).contains(&update));
        assert!(block < num_blocks);
        if count > best[update - 1] {
            best[update - 1] = count;
            trace[update - 1] = block;
        }
    }
    trace
}

#[test]
fn criterion_03_naive_resets_are_periodic_mass_events() {
    let _guard = heavy_lock();
    verdict("03 cyclical-periodicity", || {
        let started = Instant::now();
        let config = toy_config(200, 1.0, Mode::Naive, None, 0);
        let trained = run_experiment(&config).map_err(|e| e.to_string())?;
        let elapsed = started.elapsed();
        let result = &trained.result;

        let trace = argmax_trace(result, 150, 40);
        for u in 0..110 {
            ensure(trace[u] == trace[u + 40], || {
                format!("argmax trace differs at updates {} and {}: {} vs {}", u + 1, u + 41, trace[u], trace[u + 40])
            })?;
        }
        for d in 1..40 {
            let repeats = (0..150 - d).all(|u| trace[u] == trace[u + d]);
            ensure(!repeats, || format!("argmax trace already periodic at {d} < 40"))?;
        }

        // Horizon resets: all 512 envs at updates 40, 80, 120 and nowhere else.
        for &(update, _env, reason) in &result.ledger.resets {
            ensure([40, 80, 120].contains(&update), || format!("unexpected reset at update {update}"))?;
            ensure(reason == "horizon", || format!("unexpected reset reason {reason} at update {update}"))?;
        }
        for mass in [40usize, 80, 120] {
            let count = result.ledger.resets.iter().filter(|r| r.0 == mass).count();
            ensure(count == 512, || format!("update {mass}: {count} resets, expected 512"))?;
        }
        let csv = resets_csv(&result.ledger);
        ensure(csv.lines().filter(|l| l.starts_with("40,")).count() == 512, || {
            "resets.csv mass event at update 40 is incomplete".into()
        })?;

        ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}, budget 2min"))
    });
}

/// Distinct width-K elapsed windows present among each update's valid rows,
/// observed at the rollout-buffer level over a full training run.
fn window_coverage(mode: Mode) -> Vec<BTreeSet<u32>> {
    let config = toy_config(200, 1.0, mode, None, 0);
    let seed = config.seed;
    let env = config.build_env(seed).expect("env builds");
    let net_cfg = config.build_net_config(&env);
    let ppo = &config.ppo;
    let n = ppo.num_envs;

    let mut params = init_params::<f32>(net_cfg, seed);
    let mut adam = AdamState::new(params.param_count());
    let mut schedule = build_schedule(n, env.horizon, ppo.rollout_len as u32, None, mode).expect("schedule");
    let streams = |domain: Domain| -> Vec<RngStream> {
        (0..n as u64).map(|i| RngStream::new(seed, domain, i)).collect()
    };
    let mut reset_rngs = streams(Domain::EnvReset);
    let mut step_rngs = streams(Domain::EnvStep);
    let mut sample_rngs = streams(Domain::PolicySample);
    let mut stagger_rngs = streams(Domain::StaggerActions);
    let mut shuffle_rng = RngStream::new(seed, Domain::Shuffle, 0);

    let mut states: Vec<_> = reset_rngs.iter_mut().map(|rng| reset(&env, rng)).collect();
    apply_initial_stagger(&env, &mut states, &mut schedule, &mut step_rngs, &mut stagger_rngs);

    let mut coverage = Vec::with_capacity(ppo.total_updates);
    for _ in 1..=ppo.total_updates {
        let buffer =
            collect_rollout(&params, &env, &mut states, &mut schedule, ppo.rollout_len, &mut sample_rngs, &mut step_rngs);
        let windows: BTreeSet<u32> = (0..buffer.len())
            .filter(|&row| buffer.valid[row])
            .map(|row| buffer.elapsed[row] / ppo.rollout_len as u32)
            .collect();
        coverage.push(windows);
        update(&mut params, &mut adam, &buffer, ppo, &mut shuffle_rng).expect("update succeeds");
        gate_step(&env, &mut states, &mut schedule, &mut reset_rngs);
    }
    coverage
}

#[test]
fn criterion_04_staggered_batches_cover_every_stage_window() {
    let _guard = heavy_lock();
    verdict("04 batch-temporal-diversity", || {
        let all_windows: BTreeSet<u32> = (0..40).collect();
        let staggered = window_coverage(Mode::Staggered);
        for (u, windows) in staggered.iter().enumerate() {
            ensure(*windows == all_windows, || {
                format!("staggered update {}: {} of 40 windows covered", u + 1, windows.len())
            })?;
        }
        let naive = window_coverage(Mode::Naive);
        for (u, windows) in naive.iter().enumerate() {
            ensure(windows.len() == 1, || {
                format!("naive update {}: {} windows covered, expected exactly 1", u + 1, windows.len())
            })?;
        }
        Ok(())
    });
}

#[test]
fn criterion_05_mass_resets_spike_value_error_and_forgetting() {
    let _guard = heavy_lock();
    verdict("05 value-spike-and-forgetting", || {
        let (naive, staggered) = paired_results(200, 0.1, 0..5);
        for seed in 0..5 {
            let ratio = naive[seed].peak_value_mse / staggered[seed].peak_value_mse;
            ensure(ratio >= 5.0, || {
                format!(
                    "seed {seed}: peak value MSE ratio {ratio:.2} (naive {:.3} vs staggered {:.3}) below 5x",
                    naive[seed].peak_value_mse, staggered[seed].peak_value_mse
                )
            })?;
        }
        let naive_forgetting: f64 = naive.iter().map(|r| r.mean_forgetting).sum::<f64>() / 5.0;
        let staggered_forgetting: f64 = staggered.iter().map(|r| r.mean_forgetting).sum::<f64>() / 5.0;
        let ratio = naive_forgetting / staggered_forgetting;
        ensure(ratio >= 5.0, || {
            format!(
                "mean forgetting ratio {ratio:.2} (naive {naive_forgetting:.4} vs staggered {staggered_forgetting:.4}) below 5x"
            )
        })
    });
}

fn success_interval(results: &[RunResult]) -> (f64, f64) {
    let values: Vec<f64> = results.iter().map(|r| r.final_success).collect();
    mean_std(&values)
}

#[test]
fn criterion_06_long_horizons_separate_the_modes() {
    let _guard = heavy_lock();
    verdict("06 horizon-trend", || {
        let (naive_long, staggered_long) = paired_results(500, 0.5, 0..5);
        let (naive_mean_l, naive_std_l) = success_interval(&naive_long);
        let (stag_mean_l, stag_std_l) = success_interval(&staggered_long);
        ensure(stag_mean_l - stag_std_l > naive_mean_l + naive_std_l, || {
            format!(
                "H=500 intervals overlap: staggered {stag_mean_l:.3}+-{stag_std_l:.3} vs naive {naive_mean_l:.3}+-{naive_std_l:.3}"
            )
        })?;

        let (naive_short, staggered_short) = paired_results(50, 0.5, 0..5);
        let (naive_mean_s, _) = success_interval(&naive_short);
        let (stag_mean_s, _) = success_interval(&staggered_short);
        let gap_long = stag_mean_l - naive_mean_l;
        let gap_short = stag_mean_s - naive_mean_s;
        ensure(gap_short < gap_long, || {
            format!("success gap did not shrink: H=50 gap {gap_short:.3} vs H=500 gap {gap_long:.3}")
        })
    });
}

#[test]
fn criterion_07_gating_strength_widens_the_gap() {
    let _guard = heavy_lock();
    verdict("07 gating-trend", || {
        let gap_at = |p: f64| {
            let (naive, staggered) = paired_results(200, p, 0..5);
            let naive_mean = naive.iter().map(|r| r.final_success).sum::<f64>() / 5.0;
            let stag_mean = staggered.iter().map(|r| r.final_success).sum::<f64>() / 5.0;
            stag_mean - naive_mean
        };
        let gap_hard = gap_at(1.0);
        let gap_open = gap_at(0.0);
        ensure(gap_hard >= gap_open, || {
            format!("gap at p=1.0 ({gap_hard:.3}) fell below gap at p=0.0 ({gap_open:.3})")
        })
    });
}

#[test]
fn criterion_08_fine_stagger_reaches_threshold_first() {
    let _guard = heavy_lock();
    verdict("08 granularity-ablation", || {
        let updates_to_threshold = |num_groups: usize, seed: u64| -> u64 {
            let config = toy_config(200, 0.5, Mode::Staggered, Some(num_groups), seed);
            let trained = run_experiment(&config).expect("training run completes");
            trained.result.updates_to_threshold.map(|u| u as u64).unwrap_or(u64::MAX)
        };
        let mut wins = 0;
        let mut detail = Vec::new();
        for seed in 0..5 {
            let fine = updates_to_threshold(40, seed);
            let coarse_1 = updates_to_threshold(1, seed);
            let coarse_2 = updates_to_threshold(2, seed);
            let won = fine <= coarse_1 && fine <= coarse_2;
            wins += usize::from(won);
            detail.push(format!("seed {seed}: NB40 {fine} NB1 {coarse_1} NB2 {coarse_2}"));
        }
        ensure(wins >= 4, || format!("threshold reached first in only {wins}/5 seeds [{}]", detail.join("; ")))
    });
}

#[test]
fn criterion_09_cli_train_is_byte_deterministic() {
    let _guard = heavy_lock();
    verdict("09 cli-determinism", || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let config_path = dir.path().join("run.json");
        std::fs::write(
            &config_path,
            r#"{"ppo": {"num_envs_N": 128, "total_updates": 25}}"#,
        )
        .map_err(|e| e.to_string())?;

        let train = |out: &str| -> Result<(), String> {
            let status = std::process::Command::new(env!("CARGO_BIN_EXE_stagger-lab"))
                .args(["train", "--config"])
                .arg(&config_path)
                .args(["--seed", "7", "--mode", "staggered", "--threads", "1", "--out"])
                .arg(dir.path().join(out))
                .status()
                .map_err(|e| e.to_string())?;
            ensure(status.success(), || format!("train into {out} exited with {status}"))
        };
        train("first")?;
        train("second")?;

        // The config echo records the resolved output_dir, so it is excluded
        // from the byte comparison; the determinism contract covers the CSVs.
        for name in ["metrics.csv", "occupancy.csv", "forgetting.csv", "resets.csv"] {
            let first = std::fs::read(dir.path().join("first").join(name)).map_err(|e| e.to_string())?;
            let second = std::fs::read(dir.path().join("second").join(name)).map_err(|e| e.to_string())?;
            ensure(!first.is_empty(), || format!("{name} is empty"))?;
            ensure(first == second, || format!("{name} differs between identical runs"))?;
        }
        ensure(dir.path().join("first").join("config.json").exists(), || "config echo missing".into())
    });
}

#[test]
fn criterion_10_full_toy_run_fits_the_time_budget() {
    let _guard = heavy_lock();
    verdict("10 throughput-floor", || {
        let config = RunConfig::default();
        assert_eq!(config.ppo.num_envs, 512);
        assert_eq!(config.ppo.total_updates, 150);
        assert_eq!(config.ppo.rollout_len, 5);
        let started = Instant::now();
        let trained = run_experiment(&config).map_err(|e| e.to_string())?;
        let elapsed = started.elapsed();
        ensure(trained.result.ledger.rows.len() == 150, || "run did not complete 150 updates".into())?;
        ensure(elapsed <= Duration::from_secs(120), || format!("took {elapsed:?}, budget 2min"))
    });
}
