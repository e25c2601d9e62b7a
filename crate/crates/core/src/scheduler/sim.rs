//! Deterministic discrete-event driver.

use super::protocol::{execute, task_ticks, Addr, Master, Message, Outcome, Trader, Worker, WorkerStep};
use super::{Interval, LatencyModel, RunOutput, TaskId, Time, TransportStats, WorkerTrace, Workload};
use crate::error::{Error, Result};
use crate::tree::TraderAssignment;
use std::collections::{BTreeMap, HashMap};

enum Event<W: Workload> {
    Deliver { to: Addr, msg: Message<W> },
    ComputeDone { worker: usize, task: TaskId, outcome: Outcome<W> },
}

struct Queue<'w, W: Workload> {
    workload: &'w W,
    latency: LatencyModel,
    events: BTreeMap<(Time, u64), Event<W>>,
    seq: u64,
    /// Last delivery time per channel, keeping channels FIFO.
    last: HashMap<(Addr, Addr), Time>,
    stats: TransportStats,
}

impl<W: Workload> Queue<'_, W> {
    fn push(&mut self, at: Time, event: Event<W>) {
        self.events.insert((at, self.seq), event);
        self.seq += 1;
    }

    fn send(&mut self, now: Time, from: Addr, to: Addr, msg: Message<W>) {
        let bytes = msg.bytes(self.workload);
        self.stats.record(from, to, msg.kind(), bytes);
        log::trace!("t={now} {from} -> {to}: {}", msg.describe());
        let last = self.last.entry((from, to)).or_insert(0);
        let at = (now + self.latency.delay(bytes)).max(*last);
        *last = at;
        self.push(at, Event::Deliver { to, msg });
    }

    fn send_all(&mut self, now: Time, from: Addr, out: Vec<(Addr, Message<W>)>) {
        for (to, msg) in out {
            self.send(now, from, to, msg);
        }
    }
}

pub(super) fn run<'w, W: Workload>(
    workload: &'w W,
    assignment: &'w TraderAssignment,
    n_workers: usize,
    latency: LatencyModel,
    seconds_per_flop: f64,
) -> Result<RunOutput<W>> {
    let ticks = |task: TaskId| task_ticks(workload, task, seconds_per_flop);
    let mut q = Queue { workload, latency, events: BTreeMap::new(), seq: 0, last: HashMap::new(), stats: TransportStats::default() };
    let mut master = Master::new(n_workers, assignment.n_traders);
    let mut traders = Trader::for_assignment(workload, assignment);
    let mut workers: Vec<Worker> = (0..n_workers).map(Worker::new).collect();
    let mut traces: Vec<WorkerTrace> = (0..n_workers).map(|worker| WorkerTrace { worker, intervals: Vec::new() }).collect();

    for t in traders.iter_mut() {
        let out = t.start(0);
        q.send_all(0, Addr::Trader(t.id), out);
    }
    for w in &workers {
        let (to, msg) = w.request()?;
        q.send(0, Addr::Worker(w.id), to, msg);
    }

    while let Some(((now, _), event)) = q.events.pop_first() {
        match event {
            Event::Deliver { to: Addr::Master, msg } => {
                let out = master.handle(now, msg)?;
                q.send_all(now, Addr::Master, out);
            }
            Event::Deliver { to: Addr::Trader(t), msg } => {
                if traders[t].finished() {
                    continue;
                }
                let out = traders[t].handle(now, msg)?;
                q.send_all(now, Addr::Trader(t), out);
            }
            Event::Deliver { to: Addr::Worker(w), msg } => {
                if workers[w].stopped() {
                    continue;
                }
                match workers[w].handle(msg)? {
                    WorkerStep::Send(out) => q.send_all(now, Addr::Worker(w), out),
                    WorkerStep::Compute { task, payload } => {
                        let outcome = execute(workload, task, payload);
                        let end = now + ticks(task);
                        traces[w].intervals.push(Interval { start: now, end, task });
                        q.push(end, Event::ComputeDone { worker: w, task, outcome });
                    }
                    WorkerStep::Stop => {}
                }
            }
            Event::ComputeDone { worker, task, outcome } => {
                let out = workers[worker].finish(task, outcome)?;
                q.send_all(now, Addr::Worker(worker), out);
            }
        }
    }

    if let Some(e) = master.error.take() {
        return Err(e);
    }
    let pending: usize = traders.iter().map(|t| t.incomplete()).sum();
    if pending > 0 || !master.finished() {
        return Err(Error::SchedulerStall { pending });
    }
    let first_assign = master.first_assign.clone();
    Ok(RunOutput::assemble(traces, traders, &first_assign, q.stats))
}
