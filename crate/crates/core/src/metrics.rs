//! Working indices, level-cut activity profiles and speedup summaries.

use crate::error::{Error, Result};
use crate::scheduler::{Phase, Time, WorkerTrace};
use crate::tree::PartitionTree;
use serde::Serialize;
use std::fmt::Write as _;

/// Busy fraction of `trace` over `[0, span]`.
pub fn working_index(trace: &WorkerTrace, span: Time) -> Result<f64> {
    if span == 0 {
        return Err(Error::InvalidTrace("span must be positive".into()));
    }
    let mut intervals = trace.intervals.clone();
    intervals.sort_by_key(|i| (i.start, i.end));
    let mut busy: Time = 0;
    let mut last_end: Time = 0;
    for (k, i) in intervals.iter().enumerate() {
        if i.end <= i.start {
            return Err(Error::InvalidTrace(format!("worker {}: empty interval for task {}", trace.worker, i.task)));
        }
        if i.end > span {
            return Err(Error::InvalidTrace(format!("worker {}: task {} ends after the span", trace.worker, i.task)));
        }
        if k > 0 && i.start < last_end {
            return Err(Error::InvalidTrace(format!("worker {}: overlapping intervals at task {}", trace.worker, i.task)));
        }
        busy += i.end - i.start;
        last_end = i.end;
    }
    Ok(busy as f64 / span as f64)
}

/// Cut level `L = ⌈log_b N⌉ − 1` (at least 0) and the number of active
/// processes on each level from the cut up to the root.
pub fn level_cut_profile(n_leaves: u64, branching: u64) -> Result<(usize, Vec<u64>)> {
    if n_leaves == 0 || branching < 2 {
        return Err(Error::InvalidArgument(format!("need N ≥ 1 and b ≥ 2, got N={n_leaves}, b={branching}")));
    }
    let mut ceil_log = 0usize;
    let mut power: u64 = 1;
    while power < n_leaves {
        power = power.saturating_mul(branching);
        ceil_log += 1;
    }
    let level = ceil_log.saturating_sub(1);
    let profile = (0..=level as u32).rev().map(|k| branching.pow(k)).collect();
    Ok((level, profile))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkingIndexReport {
    /// Working indices sorted descending.
    pub omegas: Vec<f64>,
    /// Working index of each worker, by worker id.
    pub per_worker: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    #[serde(rename = "frac_above_0.9")]
    pub frac_above_0_9: f64,
    pub span: Time,
    /// Peak number of concurrently running tasks per tree depth.
    pub level_activity: Vec<usize>,
}

/// Keeps the intervals of `phase` (all if `None`) and shifts them so the
/// window starts at zero.
fn rebase(trace: &WorkerTrace, phase: Option<Phase>, window: (Time, Time)) -> Result<WorkerTrace> {
    let mut out = WorkerTrace { worker: trace.worker, intervals: Vec::new() };
    for i in trace.intervals.iter().filter(|i| phase.is_none_or(|p| i.task.phase == p)) {
        if i.start < window.0 {
            return Err(Error::InvalidTrace(format!("worker {}: task {} starts before the window", trace.worker, i.task)));
        }
        let mut i = *i;
        i.start -= window.0;
        i.end -= window.0;
        out.intervals.push(i);
    }
    Ok(out)
}

/// Peak concurrency per depth by sweeping interval end points.
fn level_activity(traces: &[WorkerTrace], tree: &PartitionTree) -> Vec<usize> {
    let mut peaks = vec![0usize; tree.depth + 1];
    for (depth, peak) in peaks.iter_mut().enumerate() {
        let mut events: Vec<(Time, i32)> = traces
            .iter()
            .flat_map(|t| &t.intervals)
            .filter(|i| tree.nodes.get(i.task.node).is_some_and(|n| n.depth == depth))
            .flat_map(|i| [(i.start, 1), (i.end, -1)])
            .collect();
        events.sort();
        let mut active = 0i32;
        for (_, d) in events {
            active += d;
            *peak = (*peak).max(active as usize);
        }
    }
    peaks
}

/// Working indices of all workers over `window`.
pub fn working_index_report(
    traces: &[WorkerTrace],
    tree: Option<&PartitionTree>,
    phase: Option<Phase>,
    window: (Time, Time),
) -> Result<WorkingIndexReport> {
    let span = window.1.saturating_sub(window.0).max(1);
    let rebased: Vec<WorkerTrace> = traces.iter().map(|t| rebase(t, phase, window)).collect::<Result<_>>()?;
    let per_worker: Vec<f64> = rebased.iter().map(|t| working_index(t, span)).collect::<Result<_>>()?;
    let mut omegas = per_worker.clone();
    omegas.sort_by(|a, b| b.total_cmp(a));
    let n = omegas.len().max(1) as f64;
    Ok(WorkingIndexReport {
        mean: omegas.iter().sum::<f64>() / n,
        min: omegas.last().copied().unwrap_or(0.0),
        frac_above_0_9: omegas.iter().filter(|&&w| w > 0.9).count() as f64 / n,
        span,
        level_activity: tree.map(|t| level_activity(&rebased, t)).unwrap_or_default(),
        omegas,
        per_worker,
    })
}

/// Earliest start and latest end over the given phase.
pub fn trace_window(traces: &[WorkerTrace], phase: Option<Phase>) -> (Time, Time) {
    let intervals = traces.iter().flat_map(|t| &t.intervals).filter(|i| phase.is_none_or(|p| i.task.phase == p));
    let (mut lo, mut hi) = (Time::MAX, 0);
    for i in intervals {
        lo = lo.min(i.start);
        hi = hi.max(i.end);
    }
    if lo == Time::MAX {
        (0, 0)
    } else {
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub condensation: WorkingIndexReport,
    /// Both phases, if back-substitution intervals were available.
    pub full_solve: Option<WorkingIndexReport>,
    pub sequential_time: f64,
    pub parallel_time: f64,
    pub speedup: f64,
    pub efficiency: f64,
    pub n_workers: usize,
    pub n_traders: usize,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    mean_omega: f64,
    #[serde(rename = "frac_above_0.9")]
    frac_above_0_9: f64,
    min_omega: f64,
    speedup: f64,
    efficiency: f64,
    n_workers: usize,
    n_traders: usize,
    span: Time,
    sequential_time: f64,
    parallel_time: f64,
    full_solve: Option<&'a WorkingIndexReport>,
}

/// Inputs of [`report`].
pub struct ReportInput<'a> {
    pub traces: &'a [WorkerTrace],
    pub tree: Option<&'a PartitionTree>,
    pub n_traders: usize,
    /// Condensation window; defaults to the trace extent.
    pub condense_window: Option<(Time, Time)>,
    /// Full-solve window; `None` reports the condensation phase only.
    pub full_window: Option<(Time, Time)>,
    /// Sequential time in trace units; defaults to the total busy time.
    pub sequential_time: Option<f64>,
}

/// Working indices for the condensation phase and the full solve, and
/// speedup against a sequential time.
pub fn report(input: &ReportInput<'_>) -> Result<MetricsReport> {
    let cw = input.condense_window.unwrap_or_else(|| trace_window(input.traces, Some(Phase::Condense)));
    let condensation = working_index_report(input.traces, input.tree, Some(Phase::Condense), cw)?;
    let full_solve = input
        .full_window
        .map(|w| working_index_report(input.traces, input.tree, None, w))
        .transpose()?;
    let (parallel_time, busy_phase) = match (&full_solve, input.full_window) {
        (Some(f), Some(_)) => (f.span as f64, None),
        _ => (condensation.span as f64, Some(Phase::Condense)),
    };
    let busy: Time = input.traces.iter().map(|t| match busy_phase {
        Some(p) => t.phase(p).busy(),
        None => t.busy(),
    }).sum();
    let sequential_time = input.sequential_time.unwrap_or(busy as f64);
    let n_workers = input.traces.len();
    let speedup = sequential_time / parallel_time;
    Ok(MetricsReport {
        condensation,
        full_solve,
        sequential_time,
        parallel_time,
        speedup,
        efficiency: speedup / n_workers.max(1) as f64,
        n_workers,
        n_traders: input.n_traders,
    })
}

impl MetricsReport {
    /// Descending step function `worker_id,omega` of the condensation phase.
    pub fn omega_csv(&self) -> String {
        let mut order: Vec<(usize, f64)> = self.condensation.per_worker.iter().copied().enumerate().collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut s = String::from("worker_id,omega\n");
        for (w, omega) in order {
            let _ = writeln!(s, "{w},{omega}");
        }
        s
    }

    pub fn summary_json(&self) -> String {
        let c = &self.condensation;
        let summary = Summary {
            mean_omega: c.mean,
            frac_above_0_9: c.frac_above_0_9,
            min_omega: c.min,
            speedup: self.speedup,
            efficiency: self.efficiency,
            n_workers: self.n_workers,
            n_traders: self.n_traders,
            span: c.span,
            sequential_time: self.sequential_time,
            parallel_time: self.parallel_time,
            full_solve: self.full_solve.as_ref(),
        };
        serde_json::to_string_pretty(&summary).expect("summary serialisation cannot fail")
    }
}
