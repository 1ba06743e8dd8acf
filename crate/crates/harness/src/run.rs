//! Executes an experiment config, one pipeline per (sweep point, seed).

use std::time::Instant;

use pfsmooth::stats::{loglog_slope, mean, rmse, std_dev, std_err};
use pfsmooth::{
    conditional_mean_check, default_max_trials, filter_estimate, ffbsi_marginal_estimate, genealogy_trace_smoother,
    marginal_estimate, marginal_smoothing_weights, run_filter, sample_backward_direct, sample_backward_linear,
    BackwardSampler, RngStream, SmcError, TrialCounters,
};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ExperimentKind, ObservationSource, SmootherKind};
use crate::error::HarnessError;
use crate::problem::{Oracle, Problem};
use crate::report::{GroupSummary, Row, RunReport, SeedNote, Summary};

/// What each pipeline estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Smoothing expectations through the configured smoother.
    Smooth,
    /// Filtering expectations `E[h(X_t) | y_{0:t}]`; the smoother is unused.
    Filter,
}

struct Point {
    sweep_value: u64,
    n: usize,
    horizon_index: usize,
}

#[derive(Default)]
struct TaskOut {
    rows: Vec<Row>,
    counters: Option<TrialCounters>,
    n_paths: usize,
    distinct0: Option<usize>,
    studentized: Vec<f64>,
}

/// Runs the configured smoothing experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    run_with(cfg, Mode::Smooth)
}

pub fn run_with(cfg: &ExperimentConfig, mode: Mode) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let exp = &cfg.experiment;
    let full_t = cfg.model.observations().len() - 1;
    let horizons: Vec<usize> = if exp.kind == ExperimentKind::TimeUniform {
        exp.sweep_t.clone()
    } else {
        vec![full_t]
    };
    let problems: Vec<(Problem, Oracle)> = horizons
        .iter()
        .map(|&t| {
            let p = Problem::from_config(cfg, Some(t))?;
            let o = p.oracle()?;
            Ok((p, o))
        })
        .collect::<Result<_, HarnessError>>()?;

    let n_fixed = cfg.algorithm.n_particles;
    let points: Vec<Point> = match exp.kind {
        ExperimentKind::Scaling | ExperimentKind::Bench => exp
            .sweep_n
            .iter()
            .map(|&n| Point {
                sweep_value: n as u64,
                n,
                horizon_index: 0,
            })
            .collect(),
        ExperimentKind::TimeUniform => horizons
            .iter()
            .enumerate()
            .map(|(k, &t)| Point {
                sweep_value: t as u64,
                n: n_fixed,
                horizon_index: k,
            })
            .collect(),
        ExperimentKind::OracleCompare | ExperimentKind::RbCheck => vec![Point {
            sweep_value: n_fixed as u64,
            n: n_fixed,
            horizon_index: 0,
        }],
    };
    let sweep_name = if exp.kind == ExperimentKind::TimeUniform { "T" } else { "N" };

    let tasks: Vec<(&Point, u64)> = points
        .iter()
        .flat_map(|p| exp.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let outs: Vec<TaskOut> = tasks
        .par_iter()
        .map(|&(point, seed)| {
            let (problem, oracle) = &problems[point.horizon_index];
            run_task(cfg, mode, problem, oracle, point, seed).map_err(|source| HarnessError::Run {
                seed,
                sweep: sweep_name,
                value: point.sweep_value,
                source,
            })
        })
        .collect::<Result<_, _>>()?;

    let summary = summarize(cfg, &tasks, &outs);
    let rows = outs.into_iter().flat_map(|o| o.rows).collect();
    Ok(RunReport {
        version: env!("CARGO_PKG_VERSION"),
        command: match mode {
            Mode::Smooth => "smooth".into(),
            Mode::Filter => "filter".into(),
        },
        config: cfg.clone(),
        rows,
        summary,
    })
}

fn run_task(
    cfg: &ExperimentConfig,
    mode: Mode,
    problem: &Problem,
    oracle: &Oracle,
    point: &Point,
    seed: u64,
) -> Result<TaskOut, SmcError> {
    let exp = &cfg.experiment;
    let h = exp.h;
    let model = &problem.model;
    let start = Instant::now();
    let history = run_filter(model, &problem.proposal, point.n, seed)?;
    let rng = RngStream::new(seed);
    let n_paths = cfg.n_paths(point.n);
    let max_trials = cfg.algorithm.max_trials_per_draw.unwrap_or_else(|| default_max_trials(model));
    let mut out = TaskOut {
        n_paths,
        ..TaskOut::default()
    };

    let mut estimates: Vec<(usize, f64, Option<f64>)> = Vec::new();
    if mode == Mode::Filter {
        for &s in &exp.target_times {
            let est = filter_estimate(history.step(s), |x| h.eval(*x));
            estimates.push((s, est, oracle.filtering(s, &h)));
        }
    } else if exp.kind == ExperimentKind::RbCheck {
        let sampler = match cfg.algorithm.smoother {
            SmootherKind::FfbsiLinear => BackwardSampler::Linear { max_trials },
            _ => BackwardSampler::Direct,
        };
        let mut counters = TrialCounters::new();
        for &s in &exp.target_times {
            let check = conditional_mean_check(&history, model, |path: &[f64]| h.eval(path[s]), n_paths, sampler, &rng)?;
            out.studentized.push(check.studentized());
            counters.merge(&check.counters);
            estimates.push((s, check.ffbsi_value, Some(check.ffbsm_value)));
        }
        out.counters = Some(counters);
    } else {
        let smoothed: Vec<f64> = match cfg.algorithm.smoother {
            SmootherKind::Ffbsm => {
                let sw = marginal_smoothing_weights(&history, model)?;
                exp.target_times.iter().map(|&s| marginal_estimate(&history, &sw, s, |x| h.eval(*x))).collect()
            }
            SmootherKind::FfbsiDirect | SmootherKind::FfbsiLinear => {
                let (paths, counters) = if cfg.algorithm.smoother == SmootherKind::FfbsiDirect {
                    sample_backward_direct(&history, model, n_paths, &rng)?
                } else {
                    sample_backward_linear(&history, model, n_paths, max_trials, &rng)?
                };
                out.counters = Some(counters);
                exp.target_times
                    .iter()
                    .map(|&s| ffbsi_marginal_estimate(&history, &paths, s, |x| h.eval(*x)))
                    .collect()
            }
            SmootherKind::Genealogy => {
                let g = genealogy_trace_smoother(&history);
                out.distinct0 = Some(g.distinct_at(0));
                exp.target_times.iter().map(|&s| g.estimate(&history, s, |x| h.eval(*x))).collect()
            }
        };
        for (&s, est) in exp.target_times.iter().zip(smoothed) {
            estimates.push((s, est, Some(oracle.smoothing(s, &h))));
        }
    }
    let wall_ms = exp.timing.then(|| start.elapsed().as_secs_f64() * 1e3);

    for (s, est, orc) in estimates {
        let c = out.counters.as_ref();
        out.rows.push(Row {
            seed,
            sweep_value: point.sweep_value,
            time_index: s,
            estimate: Some(est),
            oracle: orc,
            error: orc.map(|o| est - o),
            ar_trials: c.map(|c| c.total_trials()),
            elementary_ops: c.map(|c| c.elementary_ops()),
            fallback_count: c.map(|c| c.fallback_count),
            wall_ms,
        });
    }
    Ok(out)
}

fn summarize(cfg: &ExperimentConfig, tasks: &[(&Point, u64)], outs: &[TaskOut]) -> Summary {
    let mut summary = Summary::default();
    let mut sweep_values: Vec<u64> = Vec::new();
    for (p, _) in tasks {
        if !sweep_values.contains(&p.sweep_value) {
            sweep_values.push(p.sweep_value);
        }
    }

    for &v in &sweep_values {
        let group: Vec<(&TaskOut, u64)> = tasks
            .iter()
            .zip(outs)
            .filter(|((p, _), _)| p.sweep_value == v)
            .map(|((_, seed), o)| (o, *seed))
            .collect();
        let ops: Vec<f64> = group
            .iter()
            .filter_map(|(o, _)| o.counters.as_ref().map(|c| c.elementary_ops() as f64))
            .collect();
        let trials: Vec<f64> = group
            .iter()
            .filter_map(|(o, _)| {
                let c = o.counters.as_ref()?;
                let steps = c.ar_trials.len().max(1);
                Some(c.total_trials() as f64 / (o.n_paths * steps) as f64)
            })
            .collect();
        if cfg.experiment.kind == ExperimentKind::Bench && !group.is_empty() {
            let steps = group[0].0.counters.as_ref().map_or(0, |c| c.ar_trials.len());
            let worst = (0..steps)
                .map(|s| {
                    let per: Vec<f64> = group
                        .iter()
                        .filter_map(|(o, _)| o.counters.as_ref().map(|c| c.ar_trials[s] as f64 / o.n_paths as f64))
                        .collect();
                    mean(&per)
                })
                .fold(0.0, f64::max);
            summary.max_step_trials_per_draw.push(SeedNote {
                seed: 0,
                sweep_value: v,
                value: worst,
            });
        }
        for &s in &cfg.experiment.target_times {
            let rows: Vec<&Row> = group
                .iter()
                .flat_map(|(o, _)| o.rows.iter().filter(|r| r.time_index == s))
                .collect();
            if rows.is_empty() {
                continue;
            }
            let est: Vec<f64> = rows.iter().filter_map(|r| r.estimate).collect();
            let err: Vec<f64> = rows.iter().filter_map(|r| r.error).collect();
            let has_err = err.len() == rows.len();
            summary.groups.push(GroupSummary {
                sweep_value: v,
                time_index: s,
                n_seeds: rows.len(),
                mean_estimate: mean(&est),
                std_estimate: std_dev(&est),
                mean_error: has_err.then(|| mean(&err)),
                std_err_error: has_err.then(|| std_err(&err)),
                rmse: has_err.then(|| rmse(&err)),
                max_abs_error: has_err.then(|| err.iter().fold(0.0, |m: f64, e| m.max(e.abs()))),
                mean_elementary_ops: (!ops.is_empty()).then(|| mean(&ops)),
                mean_trials_per_draw: (!trials.is_empty()).then(|| mean(&trials)),
            });
        }
        for (o, seed) in &group {
            if let Some(d) = o.distinct0 {
                summary.distinct_ancestors_at_0.push(SeedNote {
                    seed: *seed,
                    sweep_value: v,
                    value: d as f64,
                });
            }
            for &z in &o.studentized {
                summary.studentized.push(SeedNote {
                    seed: *seed,
                    sweep_value: v,
                    value: z,
                });
            }
        }
    }

    summary.fallback_total = outs
        .iter()
        .filter_map(|o| o.counters.as_ref().map(|c| c.fallback_count))
        .sum();
    if summary.fallback_total > 0 {
        summary.warnings.push(format!(
            "{} backward draws hit the trial cap and used the exact-row fallback",
            summary.fallback_total
        ));
    }
    if cfg.experiment.kind == ExperimentKind::Bench && sweep_values.len() >= 2 {
        let first = cfg.experiment.target_times[0];
        let (xs, ys): (Vec<f64>, Vec<f64>) = summary
            .groups
            .iter()
            .filter(|g| g.time_index == first)
            .filter_map(|g| Some((g.sweep_value as f64, g.mean_elementary_ops?)))
            .unzip();
        if xs.len() >= 2 {
            summary.ops_loglog_slope = Some(loglog_slope(&xs, &ys));
        }
    }
    summary
}

/// Oracle smoothing expectations at every time index, one row per time.
pub fn oracle_report(cfg: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let problem = Problem::from_config(cfg, None)?;
    let oracle = problem.oracle()?;
    let h = cfg.experiment.h;
    let seed = match cfg.model.observations() {
        ObservationSource::Simulate { seed, .. } => *seed,
        ObservationSource::Values(_) => 0,
    };
    let rows = oracle
        .smoothing_path(problem.horizon, &h)
        .into_iter()
        .enumerate()
        .map(|(t, v)| Row {
            seed,
            sweep_value: problem.horizon as u64,
            time_index: t,
            estimate: None,
            oracle: Some(v),
            error: None,
            ar_trials: None,
            elementary_ops: None,
            fallback_count: None,
            wall_ms: None,
        })
        .collect();
    Ok(RunReport {
        version: env!("CARGO_PKG_VERSION"),
        command: "oracle".into(),
        config: cfg.clone(),
        rows,
        summary: Summary::default(),
    })
}
