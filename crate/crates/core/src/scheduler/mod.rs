//! Master/trader/worker execution of the condensation and back-substitution
//! task graphs.
//!
//! The master only routes `(task, trader)` tuples. Traders own tasks and
//! their data and exchange it directly with workers. Workers are memoryless:
//! they fetch one task, compute it, return the result and ask for more.
//!
//! Two drivers run the same actor state machines: [`Clock::Simulated`] is a
//! deterministic discrete-event loop where compute time is derived from task
//! flop counts, and [`Clock::Real`] runs every actor on its own thread with
//! wall-clock timestamps.

mod levelcut;
mod protocol;
mod sim;
mod task;
mod threaded;
mod workload;

pub use levelcut::{levelcut_owners, run_static_levelcut, StaticPlan};
pub use protocol::{execute, task_flops, task_ticks, Addr, Forwarded, Master, Message, Outcome, Payload, Trader, Worker, WorkerStep};
pub use task::{build_task_graph, Phase, Task, TaskId, TaskState, TraderQueue};
pub use workload::{back_substitution_flops, DofValues, NumericWorkload, SyntheticWorkload, Upward, Workload};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::solver::{Records, Solution};
use crate::tree::{PartitionTree, TraderAssignment};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Nanoseconds since the start of a run.
pub type Time = u64;

/// Per-message delivery delay `constant + per_byte · bytes`, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LatencyModel {
    pub constant: f64,
    pub per_byte: f64,
}

impl LatencyModel {
    pub fn delay(&self, bytes: usize) -> Time {
        ((self.constant + self.per_byte * bytes as f64) * 1e9).round() as Time
    }

    /// Parses `"c0,c1"`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("latency must be \"c0,c1\" with non-negative numbers, got {text:?}"));
        let (a, b) = text.split_once(',').ok_or_else(bad)?;
        let constant: f64 = a.trim().parse().map_err(|_| bad())?;
        let per_byte: f64 = b.trim().parse().map_err(|_| bad())?;
        if !(constant >= 0.0 && per_byte >= 0.0 && constant.is_finite() && per_byte.is_finite()) {
            return Err(bad());
        }
        Ok(LatencyModel { constant, per_byte })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clock {
    /// Actors on threads, wall-clock timestamps.
    Real,
    /// Discrete-event simulation; a task takes `flops · seconds_per_flop`.
    Simulated { seconds_per_flop: f64 },
}

impl Clock {
    /// Simulated clock at one nanosecond per flop.
    pub fn simulated() -> Self {
        Clock::Simulated { seconds_per_flop: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerConfig {
    pub n_workers: usize,
    pub latency: LatencyModel,
    pub clock: Clock,
}

impl SchedulerConfig {
    pub fn simulated(n_workers: usize) -> Self {
        SchedulerConfig { n_workers, latency: LatencyModel::default(), clock: Clock::simulated() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub start: Time,
    pub end: Time,
    pub task: TaskId,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WorkerTrace {
    pub worker: usize,
    pub intervals: Vec<Interval>,
}

impl WorkerTrace {
    pub fn busy(&self) -> Time {
        self.intervals.iter().map(|i| i.end - i.start).sum()
    }

    /// Intervals of one phase.
    pub fn phase(&self, phase: Phase) -> WorkerTrace {
        WorkerTrace {
            worker: self.worker,
            intervals: self.intervals.iter().filter(|i| i.task.phase == phase).copied().collect(),
        }
    }
}

/// CSV `worker_id,task_id,start,end` (nanoseconds) for the given phase.
pub fn traces_to_csv(traces: &[WorkerTrace], phase: Phase) -> String {
    let mut s = String::from("worker_id,task_id,start,end\n");
    for t in traces {
        for i in t.intervals.iter().filter(|i| i.task.phase == phase) {
            let _ = writeln!(s, "{},{},{},{}", t.worker, i.task.node, i.start, i.end);
        }
    }
    s
}

/// Parses the CSV written by [`traces_to_csv`]; `n_workers` adds empty
/// traces for workers that never ran a task.
pub fn traces_from_csv(text: &str, phase: Phase, n_workers: usize) -> Result<Vec<WorkerTrace>> {
    let mut traces: Vec<WorkerTrace> = (0..n_workers).map(|worker| WorkerTrace { worker, intervals: Vec::new() }).collect();
    let mut offset = 0;
    for (line_no, line) in text.split_inclusive('\n').enumerate() {
        let at = offset;
        offset += line.len();
        let line = line.trim();
        if line_no == 0 {
            if line != "worker_id,task_id,start,end" {
                return Err(Error::Format { offset: at, message: format!("unexpected trace header {line:?}") });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Format { offset: at, message: format!("trace row {line_no}: {what}") };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let nums: Vec<u64> = fields.iter().map(|f| f.trim().parse::<u64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad("not an integer"))?;
        let worker = nums[0] as usize;
        if worker >= traces.len() {
            traces.extend((traces.len()..=worker).map(|w| WorkerTrace { worker: w, intervals: Vec::new() }));
        }
        traces[worker].intervals.push(Interval { start: nums[2], end: nums[3], task: TaskId { node: nums[1] as usize, phase } });
    }
    if text.is_empty() {
        return Err(Error::Format { offset: 0, message: "empty trace file".into() });
    }
    Ok(traces)
}

/// Message counts and modelled bytes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransportStats {
    pub messages: usize,
    pub bytes: usize,
    pub master_messages: usize,
    pub master_bytes: usize,
    pub by_kind: BTreeMap<&'static str, usize>,
}

impl TransportStats {
    pub(crate) fn record(&mut self, from: Addr, to: Addr, kind: &'static str, bytes: usize) {
        self.messages += 1;
        self.bytes += bytes;
        if from == Addr::Master || to == Addr::Master {
            self.master_messages += 1;
            self.master_bytes += bytes;
        }
        *self.by_kind.entry(kind).or_default() += 1;
    }

    pub(crate) fn merge(&mut self, other: &TransportStats) {
        self.messages += other.messages;
        self.bytes += other.bytes;
        self.master_messages += other.master_messages;
        self.master_bytes += other.master_bytes;
        for (k, v) in &other.by_kind {
            *self.by_kind.entry(k).or_default() += v;
        }
    }
}

/// Everything a protocol run produces.
pub struct RunOutput<W: Workload> {
    pub traces: Vec<WorkerTrace>,
    pub records: BTreeMap<usize, W::Record>,
    /// Back-substitution output per node.
    pub outputs: BTreeMap<usize, W::Down>,
    /// When each task's inputs were all stored at its owner.
    pub ready_at: BTreeMap<TaskId, Time>,
    /// First Assign to last Result per phase.
    pub windows: BTreeMap<Phase, (Time, Time)>,
    pub stats: TransportStats,
}

impl<W: Workload> RunOutput<W> {
    /// Span of one phase (at least 1).
    pub fn span(&self, phase: Phase) -> Time {
        self.windows.get(&phase).map_or(1, |(a, b)| (b - a).max(1))
    }

    /// First condensation Assign to last back-substitution Result.
    pub fn total_span(&self) -> Time {
        let start = self.windows.values().map(|w| w.0).min().unwrap_or(0);
        let end = self.windows.values().map(|w| w.1).max().unwrap_or(0);
        (end - start).max(1)
    }

    pub(crate) fn assemble(
        traces: Vec<WorkerTrace>,
        traders: Vec<Trader<'_, W>>,
        first_assign: &BTreeMap<Phase, Time>,
        stats: TransportStats,
    ) -> Self {
        let mut out = RunOutput {
            traces,
            records: BTreeMap::new(),
            outputs: BTreeMap::new(),
            ready_at: BTreeMap::new(),
            windows: BTreeMap::new(),
            stats,
        };
        let mut last: BTreeMap<Phase, Time> = BTreeMap::new();
        for t in traders {
            out.records.extend(t.records);
            out.outputs.extend(t.outputs);
            out.ready_at.extend(t.ready_at);
            for (p, time) in t.last_result {
                let e = last.entry(p).or_insert(time);
                *e = (*e).max(time);
            }
        }
        for (p, &start) in first_assign {
            out.windows.insert(*p, (start, last.get(p).copied().unwrap_or(start)));
        }
        out
    }
}

/// Runs both phases of `workload` under the protocol.
pub fn run_protocol<W: Workload>(
    workload: &W,
    assignment: &TraderAssignment,
    config: &SchedulerConfig,
) -> Result<RunOutput<W>> {
    if config.n_workers == 0 {
        return Err(Error::InvalidArgument("at least one worker is required".into()));
    }
    if assignment.owner.len() != workload.tree().len() {
        return Err(Error::InvalidArgument(format!(
            "assignment covers {} nodes, tree has {}",
            assignment.owner.len(),
            workload.tree().len()
        )));
    }
    match config.clock {
        Clock::Simulated { seconds_per_flop } => {
            if !(seconds_per_flop > 0.0) {
                return Err(Error::InvalidArgument("seconds per flop must be positive".into()));
            }
            sim::run(workload, assignment, config.n_workers, config.latency, seconds_per_flop)
        }
        Clock::Real => threaded::run(workload, assignment, config.n_workers, config.latency),
    }
}

/// A parallel numeric solve.
#[derive(Debug, Clone)]
pub struct ParallelRun {
    pub solution: Solution,
    pub traces: Vec<WorkerTrace>,
    pub records: Records,
    pub windows: BTreeMap<Phase, (Time, Time)>,
    pub ready_at: BTreeMap<TaskId, Time>,
    pub stats: TransportStats,
}

impl ParallelRun {
    pub fn span(&self, phase: Phase) -> Time {
        self.windows.get(&phase).map_or(1, |(a, b)| (b - a).max(1))
    }

    pub fn total_span(&self) -> Time {
        let start = self.windows.values().map(|w| w.0).min().unwrap_or(0);
        let end = self.windows.values().map(|w| w.1).max().unwrap_or(0);
        (end - start).max(1)
    }
}

/// Collects the eliminated values of every node into a solution.
pub fn solution_from_outputs(tree: &PartitionTree, records: &Records, outputs: &BTreeMap<usize, DofValues>, n_dofs: usize) -> Result<Solution> {
    let mut values: Vec<Option<f64>> = vec![None; n_dofs];
    for node in &tree.nodes {
        let out = outputs
            .get(&node.id)
            .ok_or_else(|| Error::Inconsistency(format!("node {} was never back-substituted", node.id)))?;
        let eliminated = records.get(&node.id).map(|r| r.eliminated.as_slice()).unwrap_or(&[]);
        for &d in eliminated {
            if let Ok(i) = out.binary_search_by_key(&d, |p| p.0) {
                values[d] = Some(out[i].1);
            }
        }
    }
    let values = values
        .into_iter()
        .enumerate()
        .map(|(d, v)| v.ok_or(Error::IncompleteSolution { dof: d }))
        .collect::<Result<_>>()?;
    Ok(Solution { values })
}

/// Solves the mesh system through the protocol.
pub fn run_parallel(
    tree: &PartitionTree,
    mesh: &Mesh,
    assignment: &TraderAssignment,
    config: &SchedulerConfig,
) -> Result<ParallelRun> {
    let workload = NumericWorkload::new(tree, mesh);
    let out = run_protocol(&workload, assignment, config)?;
    let solution = solution_from_outputs(tree, &out.records, &out.outputs, mesh.n_dofs)?;
    Ok(ParallelRun {
        solution,
        traces: out.traces,
        records: out.records,
        windows: out.windows,
        ready_at: out.ready_at,
        stats: out.stats,
    })
}
