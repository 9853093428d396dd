//! Scoring candidates on a channel batch.

use std::time::Instant;

use super::{EvalStatus, EvolutionConfig, FitnessReport, HeuristicCandidate, NativeId, Payload, Task};
use crate::channel::ChannelBatch;
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::heuristics::{
    autoport, exhaustive_search, random_baseline, run_ga, CrossoverKind, GaConfig, GraspConfig, MutationKind,
};

/// Executes guest source for a task and scores it on the first `b`
/// realizations of a batch.
pub trait GuestRunner: Sync {
    fn run(&self, task: Task, source: &str, batch: &ChannelBatch, b: usize) -> FitnessReport;
}

/// GA settings a candidate operator is spliced into: the basic GA with the
/// candidate in place of its crossover (mutation task: frequency crossover
/// plus the candidate mutation).
fn operator_ga(id: NativeId, seed: u64) -> GaConfig {
    let base = GaConfig {
        seed,
        ..GaConfig::basic()
    };
    match id {
        NativeId::CrossoverBasic => base,
        NativeId::CrossoverFrequency => GaConfig {
            crossover_kind: CrossoverKind::Frequency,
            ..base
        },
        NativeId::MutationBasic => GaConfig {
            crossover_kind: CrossoverKind::Frequency,
            ..base
        },
        NativeId::MutationSwapNoise => GaConfig {
            crossover_kind: CrossoverKind::Frequency,
            mutation_kind: MutationKind::SwapNoise,
            ..base
        },
        _ => unreachable!("selector ids never reach the operator path"),
    }
}

/// Balanced SINR the built-in heuristic `id` reaches on one realization.
/// Every randomized heuristic draws from the stream keyed by
/// `(seed, realization)`.
pub(crate) fn native_gamma(id: NativeId, batch: &ChannelBatch, r: usize, seed: u64) -> Result<f64> {
    match id {
        NativeId::RandomSelection => Ok(random_baseline(batch, r, seed)?.1),
        NativeId::Autoport => Ok(autoport(
            batch,
            r,
            &GraspConfig {
                seed,
                ..GraspConfig::default()
            },
        )?
        .gamma),
        NativeId::BasicGa => Ok(run_ga(
            batch,
            r,
            &GaConfig {
                seed,
                ..GaConfig::basic()
            },
        )?
        .gamma),
        NativeId::GaC => Ok(run_ga(
            batch,
            r,
            &GaConfig {
                seed,
                ..GaConfig::ga_c()
            },
        )?
        .gamma),
        NativeId::GaCm => Ok(run_ga(
            batch,
            r,
            &GaConfig {
                seed,
                ..GaConfig::ga_cm()
            },
        )?
        .gamma),
        NativeId::Exhaustive => Ok(exhaustive_search(batch, r)?.1),
        op => Ok(run_ga(batch, r, &operator_ga(op, seed))?.gamma),
    }
}

fn score_native(
    id: NativeId,
    task: Task,
    batch: &ChannelBatch,
    b: usize,
    seed: u64,
) -> Result<Vec<f64>, FitnessReport> {
    if id.task() != task {
        return Err(FitnessReport::failed(
            EvalStatus::InvalidOutput,
            format!("`{id}` does not implement the {task:?} task"),
            0.0,
        ));
    }
    exec::try_map_range(ExecMode::default(), b, |r| native_gamma(id, batch, r, seed))
        .map_err(|e: Error| FitnessReport::failed(EvalStatus::RuntimeError, e.to_string(), 0.0))
}

/// Scores a candidate on the first `cfg.batch_b` realizations.
///
/// Never fails: errors are folded into the report status.
pub fn evaluate_candidate(
    cand: &HeuristicCandidate,
    batch: &ChannelBatch,
    cfg: &EvolutionConfig,
    guest: Option<&dyn GuestRunner>,
) -> FitnessReport {
    let start = Instant::now();
    let b = cfg.batch_b.min(batch.len());
    let mut report = match &cand.payload {
        Payload::Native(id) => match score_native(*id, cfg.task, batch, b, cfg.seed) {
            Ok(values) => FitnessReport::ok(values, 0.0),
            Err(failed) => failed,
        },
        Payload::GuestSource(src) => match guest {
            Some(runner) if !src.trim().is_empty() => runner.run(cfg.task, src, batch, b),
            Some(_) => FitnessReport::failed(EvalStatus::InvalidOutput, "empty guest source", 0.0),
            None => FitnessReport::failed(EvalStatus::RuntimeError, "no guest runtime configured", 0.0),
        },
    };
    if report.status == EvalStatus::Ok && !report.mean_min_sinr.is_finite() {
        report = FitnessReport::failed(EvalStatus::InvalidOutput, "non-finite fitness", 0.0);
    }
    report.wall_time_s = if cfg.record_timing {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    };
    report
}
