//! Real-clock driver: one thread per actor, FIFO channels with an optional
//! delivery delay.

use super::protocol::{execute, Addr, Master, Message, Outbox, Trader, Worker, WorkerStep};
use super::{Interval, LatencyModel, RunOutput, Time, TransportStats, WorkerTrace, Workload};
use crate::error::{Error, Result};
use crate::tree::TraderAssignment;
use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

/// How long the master waits before re-checking for a stall.
const STALL_POLL: Duration = Duration::from_millis(20);

struct Envelope<W: Workload> {
    at: Instant,
    msg: Message<W>,
}

struct Endpoint<'a, W: Workload> {
    me: Addr,
    rx: Receiver<Envelope<W>>,
    senders: Vec<Sender<Envelope<W>>>,
    n_traders: usize,
    held: BTreeMap<(Instant, u64), Message<W>>,
    seq: u64,
    last: HashMap<Addr, Instant>,
    stats: TransportStats,
    /// Messages sent but not yet fully handled, plus start-up tokens.
    in_flight: &'a AtomicUsize,
    latency: LatencyModel,
    workload: &'a W,
    epoch: Instant,
}

impl<W: Workload> Endpoint<'_, W> {
    fn now(&self) -> Time {
        self.epoch.elapsed().as_nanos() as Time
    }

    fn index(&self, addr: Addr) -> usize {
        match addr {
            Addr::Master => 0,
            Addr::Trader(t) => 1 + t,
            Addr::Worker(w) => 1 + self.n_traders + w,
        }
    }

    fn send(&mut self, to: Addr, msg: Message<W>) {
        let bytes = msg.bytes(self.workload);
        self.stats.record(self.me, to, msg.kind(), bytes);
        log::trace!("t={} {} -> {to}: {}", self.now(), self.me, msg.describe());
        let now = Instant::now();
        let mut at = now + Duration::from_nanos(self.latency.delay(bytes));
        if let Some(&prev) = self.last.get(&to) {
            at = at.max(prev);
        }
        self.last.insert(to, at);
        self.in_flight.fetch_add(1, Ordering::SeqCst);
        if self.senders[self.index(to)].send(Envelope { at, msg }).is_err() {
            // receiver already shut down
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
        }
    }

    fn send_all(&mut self, out: Outbox<W>) {
        for (to, msg) in out {
            self.send(to, msg);
        }
    }

    fn handled(&self) {
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
    }

    /// Next due message; `None` on timeout or when every sender is gone.
    fn recv(&mut self, timeout: Option<Duration>) -> Option<Message<W>> {
        loop {
            let now = Instant::now();
            let due = self.held.first_key_value().map(|(k, _)| k.0);
            if due.is_some_and(|d| d <= now) {
                return self.held.pop_first().map(|(_, m)| m);
            }
            let until_due = due.map(|d| d - now);
            let wait = match (until_due, timeout) {
                (Some(d), Some(t)) => Some(d.min(t)),
                (d, t) => d.or(t),
            };
            let received = match wait {
                Some(w) => self.rx.recv_timeout(w),
                None => self.rx.recv().map_err(|_| RecvTimeoutError::Disconnected),
            };
            match received {
                Ok(env) => {
                    self.held.insert((env.at, self.seq), env.msg);
                    self.seq += 1;
                }
                Err(RecvTimeoutError::Timeout) => {
                    if timeout.is_some_and(|t| until_due.is_none_or(|d| t < d)) {
                        return None;
                    }
                }
                Err(RecvTimeoutError::Disconnected) => {
                    let d = until_due?;
                    thread::sleep(d)
                },
            }
        }
    }
}

pub(super) fn run<W: Workload>(
    workload: &W,
    assignment: &TraderAssignment,
    n_workers: usize,
    latency: LatencyModel,
) -> Result<RunOutput<W>> {
    let n_traders = assignment.n_traders;
    let n_actors = 1 + n_traders + n_workers;
    let (senders, mut receivers): (Vec<_>, Vec<_>) = (0..n_actors).map(|_| channel::<Envelope<W>>()).unzip();
    let in_flight = AtomicUsize::new(n_traders + n_workers);
    let epoch = Instant::now();
    let endpoint = |me: Addr, rx: Receiver<Envelope<W>>| Endpoint {
        me,
        rx,
        senders: senders.clone(),
        n_traders,
        held: BTreeMap::new(),
        seq: 0,
        last: HashMap::new(),
        stats: TransportStats::default(),
        in_flight: &in_flight,
        latency,
        workload,
        epoch,
    };
    let worker_eps: Vec<_> = receivers.drain(1 + n_traders..).enumerate().map(|(w, rx)| endpoint(Addr::Worker(w), rx)).collect();
    let trader_eps: Vec<_> = receivers.drain(1..).enumerate().map(|(t, rx)| endpoint(Addr::Trader(t), rx)).collect();
    let master_ep = endpoint(Addr::Master, receivers.pop().expect("master channel"));
    let traders = Trader::for_assignment(workload, assignment);

    let (master, trader_results, worker_results) = thread::scope(|s| {
        let master = s.spawn(move || master_loop(master_ep, Master::new(n_workers, n_traders)));
        let traders: Vec<_> = traders
            .into_iter()
            .zip(trader_eps)
            .map(|(trader, ep)| s.spawn(move || trader_loop(ep, trader)))
            .collect();
        let workers: Vec<_> = worker_eps
            .into_iter()
            .enumerate()
            .map(|(w, ep)| s.spawn(move || worker_loop(ep, Worker::new(w), workload)))
            .collect();
        (
            master.join().unwrap_or_else(|e| std::panic::resume_unwind(e)),
            traders.into_iter().map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e))).collect::<Vec<_>>(),
            workers.into_iter().map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e))).collect::<Vec<_>>(),
        )
    });

    let (mut master, mut stats) = master;
    let mut traders = Vec::with_capacity(n_traders);
    for (t, s) in trader_results {
        stats.merge(&s);
        traders.push(t);
    }
    let mut traces = Vec::with_capacity(n_workers);
    for (t, s) in worker_results {
        stats.merge(&s);
        traces.push(t);
    }
    match master.error.take() {
        Some(Error::SchedulerStall { .. }) => {
            return Err(Error::SchedulerStall { pending: traders.iter().map(|t| t.incomplete()).sum() });
        }
        Some(e) => return Err(e),
        None => {}
    }
    let first_assign = master.first_assign.clone();
    Ok(RunOutput::assemble(traces, traders, &first_assign, stats))
}

fn master_loop<W: Workload>(mut ep: Endpoint<'_, W>, mut master: Master) -> (Master, TransportStats) {
    while !master.finished() {
        match ep.recv(Some(STALL_POLL)) {
            Some(msg) => {
                let out = master.handle(ep.now(), msg).unwrap_or_else(|e| master.fail(e));
                ep.send_all(out);
                ep.handled();
            }
            None => {
                if ep.in_flight.load(Ordering::SeqCst) == 0 {
                    let out = master.stall();
                    ep.send_all(out);
                }
            }
        }
    }
    (master, ep.stats)
}

fn trader_loop<'a, W: Workload>(mut ep: Endpoint<'_, W>, mut trader: Trader<'a, W>) -> (Trader<'a, W>, TransportStats) {
    let out = trader.start(ep.now());
    ep.send_all(out);
    ep.handled();
    while !trader.finished() {
        let Some(msg) = ep.recv(None) else { break };
        match trader.handle(ep.now(), msg) {
            Ok(out) => ep.send_all(out),
            Err(error) => ep.send(Addr::Master, Message::Abort { source: ep.me, error }),
        }
        ep.handled();
    }
    (trader, ep.stats)
}

fn worker_loop<W: Workload>(mut ep: Endpoint<'_, W>, mut worker: Worker, workload: &W) -> (WorkerTrace, TransportStats) {
    let mut trace = WorkerTrace { worker: worker.id, intervals: Vec::new() };
    match worker.request() {
        Ok((to, msg)) => ep.send(to, msg),
        Err(error) => ep.send(Addr::Master, Message::Abort { source: ep.me, error }),
    }
    ep.handled();
    while !worker.stopped() {
        let Some(msg) = ep.recv(None) else { break };
        let step = worker.handle(msg).and_then(|step| match step {
            WorkerStep::Compute { task, payload } => {
                let start = ep.now();
                let outcome = execute(workload, task, payload);
                let end = ep.now().max(start + 1);
                trace.intervals.push(Interval { start, end, task });
                worker.finish(task, outcome)
            }
            WorkerStep::Send(out) => Ok(out),
            WorkerStep::Stop => Ok(Vec::new()),
        });
        match step {
            Ok(out) => ep.send_all(out),
            Err(error) => ep.send(Addr::Master, Message::Abort { source: ep.me, error }),
        }
        ep.handled();
    }
    (trace, ep.stats)
}
