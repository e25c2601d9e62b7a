//! Protocol messages and the master, trader and worker state machines.
//!
//! Actors never share state; each `handle` consumes one message and returns
//! the messages to send. Drivers decide how time passes and how messages are
//! delivered.

use super::task::{build_task_graph, Phase, TaskId, TraderQueue};
use super::workload::Workload;
use super::Time;
use crate::error::{Error, Result};
use crate::tree::TraderAssignment;
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Addr {
    Master,
    Trader(usize),
    Worker(usize),
}

impl fmt::Display for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Addr::Master => write!(f, "master"),
            Addr::Trader(t) => write!(f, "trader{t}"),
            Addr::Worker(w) => write!(f, "worker{w}"),
        }
    }
}

pub enum Payload<W: Workload> {
    Condense(Vec<W::Up>),
    BackSubstitute(W::Record, W::Down),
}

pub enum Outcome<W: Workload> {
    Condensed(W::Up, W::Record),
    Substituted(W::Down),
    Failed(Error),
}

pub enum Forwarded<W: Workload> {
    Up(W::Up),
    Down(W::Down),
}

pub enum Message<W: Workload> {
    TaskRequest { worker: usize },
    Advert { trader: usize, task: TaskId },
    Assign { task: TaskId, trader: usize },
    Fetch { worker: usize, task: TaskId },
    TaskData { task: TaskId, payload: Payload<W> },
    Result { worker: usize, task: TaskId, outcome: Outcome<W> },
    /// `task` is the destination task; `source` the node that produced `data`.
    ResultForward { task: TaskId, source: usize, data: Forwarded<W> },
    TraderDone { trader: usize },
    Abort { source: Addr, error: Error },
    Shutdown,
}

/// Size of a routing header: a few machine words.
const HEADER_BYTES: usize = 24;

impl<W: Workload> Message<W> {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::TaskRequest { .. } => "TaskRequest",
            Message::Advert { .. } => "Advert",
            Message::Assign { .. } => "Assign",
            Message::Fetch { .. } => "Fetch",
            Message::TaskData { .. } => "TaskData",
            Message::Result { .. } => "Result",
            Message::ResultForward { .. } => "ResultForward",
            Message::TraderDone { .. } => "TraderDone",
            Message::Abort { .. } => "Abort",
            Message::Shutdown => "Shutdown",
        }
    }

    /// Modelled wire size.
    pub fn bytes(&self, w: &W) -> usize {
        HEADER_BYTES
            + match self {
                Message::TaskData { payload: Payload::Condense(ups), .. } => ups.iter().map(|u| w.up_bytes(u)).sum(),
                Message::TaskData { payload: Payload::BackSubstitute(r, d), .. } => w.record_bytes(r) + w.down_bytes(d),
                Message::Result { outcome: Outcome::Condensed(u, r), .. } => w.up_bytes(u) + w.record_bytes(r),
                Message::Result { outcome: Outcome::Substituted(d), .. } => w.down_bytes(d),
                Message::ResultForward { data: Forwarded::Up(u), .. } => w.up_bytes(u),
                Message::ResultForward { data: Forwarded::Down(d), .. } => w.down_bytes(d),
                _ => 0,
            }
    }

    pub fn describe(&self) -> String {
        match self {
            Message::TaskRequest { worker } => format!("TaskRequest(worker={worker})"),
            Message::Advert { trader, task } => format!("Advert(trader={trader}, task={task})"),
            Message::Assign { task, trader } => format!("Assign(task={task}, trader={trader})"),
            Message::Fetch { worker, task } => format!("Fetch(worker={worker}, task={task})"),
            Message::TaskData { task, .. } => format!("TaskData(task={task})"),
            Message::Result { worker, task, .. } => format!("Result(worker={worker}, task={task})"),
            Message::ResultForward { task, source, .. } => format!("ResultForward(task={task}, source={source})"),
            Message::TraderDone { trader } => format!("TraderDone(trader={trader})"),
            Message::Abort { source, error } => format!("Abort(source={source}, {error})"),
            Message::Shutdown => "Shutdown".to_string(),
        }
    }
}

pub type Outbox<W> = Vec<(Addr, Message<W>)>;

/// Routing only: one advert slot per trader and a FIFO of idle workers.
#[derive(Debug)]
pub struct Master {
    n_workers: usize,
    n_traders: usize,
    adverts: Vec<Option<TaskId>>,
    cursor: usize,
    idle: VecDeque<usize>,
    done: Vec<bool>,
    finished: bool,
    pub error: Option<Error>,
    pub first_assign: BTreeMap<Phase, Time>,
}

impl Master {
    pub fn new(n_workers: usize, n_traders: usize) -> Self {
        Master {
            n_workers,
            n_traders,
            adverts: vec![None; n_traders],
            cursor: 0,
            idle: VecDeque::new(),
            done: vec![false; n_traders],
            finished: false,
            error: None,
            first_assign: BTreeMap::new(),
        }
    }

    pub fn finished(&self) -> bool {
        self.finished
    }

    pub fn idle_workers(&self) -> usize {
        self.idle.len()
    }

    pub fn has_adverts(&self) -> bool {
        self.adverts.iter().any(Option::is_some)
    }

    fn assign<W: Workload>(&mut self, now: Time, worker: usize, trader: usize, task: TaskId) -> (Addr, Message<W>) {
        self.first_assign.entry(task.phase).or_insert(now);
        (Addr::Worker(worker), Message::Assign { task, trader })
    }

    /// Next advert in round-robin order over traders.
    fn take_advert(&mut self) -> Option<(usize, TaskId)> {
        let (start, n) = (self.cursor, self.n_traders);
        let t = (0..n).map(|k| (start + k) % n).find(|&t| self.adverts[t].is_some())?;
        self.cursor = (t + 1) % n;
        self.adverts[t].take().map(|task| (t, task))
    }

    /// Records `error` and stops everyone.
    pub fn fail<W: Workload>(&mut self, error: Error) -> Outbox<W> {
        self.error = Some(error);
        self.shutdown_all()
    }

    fn shutdown_all<W: Workload>(&mut self) -> Outbox<W> {
        self.finished = true;
        self.idle.clear();
        let workers = (0..self.n_workers).map(|w| (Addr::Worker(w), Message::Shutdown));
        let traders = (0..self.n_traders).map(|t| (Addr::Trader(t), Message::Shutdown));
        workers.chain(traders).collect()
    }

    /// Stops the run after a detected stall.
    pub fn stall<W: Workload>(&mut self) -> Outbox<W> {
        self.fail(Error::SchedulerStall { pending: 0 })
    }

    pub fn handle<W: Workload>(&mut self, now: Time, msg: Message<W>) -> Result<Outbox<W>> {
        if self.finished {
            return Ok(Vec::new());
        }
        match msg {
            Message::TaskRequest { worker } => Ok(match self.take_advert() {
                Some((trader, task)) => vec![self.assign(now, worker, trader, task)],
                None => {
                    self.idle.push_back(worker);
                    Vec::new()
                }
            }),
            Message::Advert { trader, task } => {
                if trader >= self.n_traders || self.adverts[trader].is_some() {
                    return Err(Error::ProtocolViolation(format!("trader {trader} advertised {task} with its slot in use")));
                }
                Ok(match self.idle.pop_front() {
                    Some(worker) => vec![self.assign(now, worker, trader, task)],
                    None => {
                        self.adverts[trader] = Some(task);
                        Vec::new()
                    }
                })
            }
            Message::TraderDone { trader } => {
                self.done[trader] = true;
                Ok(if self.done.iter().all(|&d| d) { self.shutdown_all() } else { Vec::new() })
            }
            Message::Abort { error, .. } => Ok(self.fail(error)),
            other => Err(Error::ProtocolViolation(format!("master received {}", other.describe()))),
        }
    }
}

/// Owns a fixed set of tasks, their inputs and results.
pub struct Trader<'a, W: Workload> {
    pub id: usize,
    workload: &'a W,
    owner: &'a [usize],
    pub condense: TraderQueue,
    pub back: TraderQueue,
    inbox: HashMap<usize, Vec<(usize, W::Up)>>,
    pub records: BTreeMap<usize, W::Record>,
    down_in: HashMap<usize, W::Down>,
    pub outputs: BTreeMap<usize, W::Down>,
    advert: Option<TaskId>,
    done_sent: bool,
    shut: bool,
    /// When each owned task became ready.
    pub ready_at: BTreeMap<TaskId, Time>,
    /// Arrival of the last Result per phase.
    pub last_result: BTreeMap<Phase, Time>,
}

impl<'a, W: Workload> Trader<'a, W> {
    /// All traders of an assignment.
    pub fn for_assignment(workload: &'a W, assignment: &'a TraderAssignment) -> Vec<Self> {
        let tree = workload.tree();
        let condense = build_task_graph(tree, assignment, Phase::Condense);
        let back = build_task_graph(tree, assignment, Phase::BackSubstitute);
        condense
            .into_iter()
            .zip(back)
            .enumerate()
            .map(|(id, (condense, back))| Trader {
                id,
                workload,
                owner: &assignment.owner,
                condense,
                back,
                inbox: HashMap::new(),
                records: BTreeMap::new(),
                down_in: HashMap::new(),
                outputs: BTreeMap::new(),
                advert: None,
                done_sent: false,
                shut: false,
                ready_at: BTreeMap::new(),
                last_result: BTreeMap::new(),
            })
            .collect()
    }

    pub fn finished(&self) -> bool {
        self.shut
    }

    pub fn all_done(&self) -> bool {
        self.condense.all_done() && self.back.all_done()
    }

    /// Tasks not yet completed in either phase.
    pub fn incomplete(&self) -> usize {
        use super::task::TaskState::Done;
        self.condense.tasks().chain(self.back.tasks()).filter(|t| t.state != Done).count()
    }

    pub fn start(&mut self, now: Time) -> Outbox<W> {
        let ready: Vec<usize> = self.condense.tasks().filter(|t| t.deps_unmet == 0).map(|t| t.id).collect();
        for id in ready {
            self.ready_at.insert(TaskId::condense(id), now);
        }
        let mut out = Vec::new();
        self.after(&mut out);
        out
    }

    /// Refills the advert slot and reports completion.
    fn after(&mut self, out: &mut Outbox<W>) {
        if self.advert.is_none() {
            let next = self.condense.pop_ready().map(TaskId::condense).or_else(|| self.back.pop_ready().map(TaskId::back));
            if let Some(task) = next {
                self.advert = Some(task);
                out.push((Addr::Master, Message::Advert { trader: self.id, task }));
            }
        }
        if !self.done_sent && self.all_done() {
            self.done_sent = true;
            out.push((Addr::Master, Message::TraderDone { trader: self.id }));
        }
    }

    fn local_up(&mut self, now: Time, parent: usize, child: usize, up: W::Up) -> Result<()> {
        let slot = self.inbox.entry(parent).or_default();
        if slot.iter().any(|(c, _)| *c == child) {
            return Err(Error::ProtocolViolation(format!("duplicate completion of condense task {child}")));
        }
        slot.push((child, up));
        if self.condense.dependency_met(parent)? {
            self.ready_at.insert(TaskId::condense(parent), now);
        }
        Ok(())
    }

    fn local_down(&mut self, now: Time, node: usize, down: W::Down) -> Result<()> {
        if self.down_in.insert(node, down).is_some() {
            return Err(Error::ProtocolViolation(format!("duplicate input for back-substitution task {node}")));
        }
        if self.back.dependency_met(node)? {
            self.ready_at.insert(TaskId::back(node), now);
        }
        Ok(())
    }

    fn payload(&mut self, task: TaskId) -> Result<Payload<W>> {
        match task.phase {
            Phase::Condense => {
                let mut inputs = self.workload.leaf_inputs(task.node)?;
                let mut children = self.inbox.remove(&task.node).unwrap_or_default();
                children.sort_by_key(|(c, _)| *c);
                inputs.extend(children.into_iter().map(|(_, u)| u));
                Ok(Payload::Condense(inputs))
            }
            Phase::BackSubstitute => {
                let record = self.records.get(&task.node).cloned().ok_or_else(|| {
                    Error::Inconsistency(format!("no record for back-substitution task {}", task.node))
                })?;
                let input = self.down_in.remove(&task.node).ok_or_else(|| {
                    Error::Inconsistency(format!("no input for back-substitution task {}", task.node))
                })?;
                Ok(Payload::BackSubstitute(record, input))
            }
        }
    }

    pub fn handle(&mut self, now: Time, msg: Message<W>) -> Result<Outbox<W>> {
        let mut out = Vec::new();
        match msg {
            Message::Fetch { worker, task } => {
                if self.advert != Some(task) {
                    return Err(Error::ProtocolViolation(format!("trader {} got a fetch for unadvertised {task}", self.id)));
                }
                self.advert = None;
                match task.phase {
                    Phase::Condense => self.condense.start(task.node)?,
                    Phase::BackSubstitute => self.back.start(task.node)?,
                }
                let payload = self.payload(task)?;
                out.push((Addr::Worker(worker), Message::TaskData { task, payload }));
            }
            Message::Result { task, outcome, .. } => {
                self.last_result.insert(task.phase, now);
                let node = task.node;
                let tree = self.workload.tree();
                match outcome {
                    Outcome::Failed(e) => return Err(e),
                    Outcome::Condensed(up, record) => {
                        if task.phase != Phase::Condense {
                            return Err(Error::ProtocolViolation(format!("condensation result for {task}")));
                        }
                        self.condense.finish(node)?;
                        self.records.insert(node, record);
                        match tree.nodes[node].parent {
                            Some(parent) if self.owner[parent] == self.id => self.local_up(now, parent, node, up)?,
                            Some(parent) => out.push((
                                Addr::Trader(self.owner[parent]),
                                Message::ResultForward { task: TaskId::condense(parent), source: node, data: Forwarded::Up(up) },
                            )),
                            None => self.local_down(now, node, self.workload.root_input())?,
                        }
                    }
                    Outcome::Substituted(down) => {
                        if task.phase != Phase::BackSubstitute {
                            return Err(Error::ProtocolViolation(format!("back-substitution result for {task}")));
                        }
                        self.back.finish(node)?;
                        for &child in &tree.nodes[node].children {
                            let part = self.workload.restrict(child, &down);
                            if self.owner[child] == self.id {
                                self.local_down(now, child, part)?;
                            } else {
                                out.push((
                                    Addr::Trader(self.owner[child]),
                                    Message::ResultForward { task: TaskId::back(child), source: node, data: Forwarded::Down(part) },
                                ));
                            }
                        }
                        self.outputs.insert(node, down);
                    }
                }
            }
            Message::ResultForward { task, source, data } => match data {
                Forwarded::Up(up) => self.local_up(now, task.node, source, up)?,
                Forwarded::Down(down) => self.local_down(now, task.node, down)?,
            },
            Message::Shutdown => {
                self.shut = true;
                return Ok(out);
            }
            other => return Err(Error::ProtocolViolation(format!("trader {} received {}", self.id, other.describe()))),
        }
        self.after(&mut out);
        Ok(out)
    }
}

/// What a worker does with a message.
pub enum WorkerStep<W: Workload> {
    Send(Outbox<W>),
    Compute { task: TaskId, payload: Payload<W> },
    Stop,
}

/// Holds at most the identity of its current task; the payload is handed to
/// the driver for execution and never stored.
#[derive(Debug)]
pub struct Worker {
    pub id: usize,
    current: Option<(TaskId, usize)>,
    stopped: bool,
}

impl Worker {
    pub fn new(id: usize) -> Self {
        Worker { id, current: None, stopped: false }
    }

    pub fn stopped(&self) -> bool {
        self.stopped
    }

    /// Worker-local storage, empty between tasks.
    pub fn retained(&self) -> usize {
        usize::from(self.current.is_some())
    }

    pub fn request<W: Workload>(&self) -> Result<(Addr, Message<W>)> {
        if self.retained() != 0 {
            return Err(Error::ProtocolViolation(format!("worker {} requests a task while holding one", self.id)));
        }
        Ok((Addr::Master, Message::TaskRequest { worker: self.id }))
    }

    pub fn handle<W: Workload>(&mut self, msg: Message<W>) -> Result<WorkerStep<W>> {
        match msg {
            Message::Assign { task, trader } => {
                if self.current.is_some() {
                    return Err(Error::ProtocolViolation(format!("worker {} assigned {task} while busy", self.id)));
                }
                self.current = Some((task, trader));
                Ok(WorkerStep::Send(vec![(Addr::Trader(trader), Message::Fetch { worker: self.id, task })]))
            }
            Message::TaskData { task, payload } => match self.current {
                Some((t, _)) if t == task => Ok(WorkerStep::Compute { task, payload }),
                _ => Err(Error::ProtocolViolation(format!("worker {} received data for {task}", self.id))),
            },
            Message::Shutdown => {
                self.stopped = true;
                Ok(WorkerStep::Stop)
            }
            other => Err(Error::ProtocolViolation(format!("worker {} received {}", self.id, other.describe()))),
        }
    }

    /// Reports the outcome and asks for the next task.
    pub fn finish<W: Workload>(&mut self, task: TaskId, outcome: Outcome<W>) -> Result<Outbox<W>> {
        let (current, trader) = self
            .current
            .take()
            .filter(|(t, _)| *t == task)
            .ok_or_else(|| Error::ProtocolViolation(format!("worker {} finished {task} it was not running", self.id)))?;
        let result = (Addr::Trader(trader), Message::Result { worker: self.id, task: current, outcome });
        Ok(vec![result, self.request()?])
    }
}

/// Runs one task on its payload.
pub fn execute<W: Workload>(workload: &W, task: TaskId, payload: Payload<W>) -> Outcome<W> {
    let result = match payload {
        Payload::Condense(inputs) => workload.condense(task.node, &inputs).map(|(u, r)| Outcome::Condensed(u, r)),
        Payload::BackSubstitute(record, input) => {
            workload.back_substitute(task.node, &record, &input).map(Outcome::Substituted)
        }
    };
    result.unwrap_or_else(Outcome::Failed)
}

/// Modelled compute cost of a task in floating point operations.
pub fn task_flops<W: Workload>(workload: &W, task: TaskId) -> f64 {
    match task.phase {
        Phase::Condense => workload.condense_flops(task.node),
        Phase::BackSubstitute => workload.back_flops(task.node),
    }
}

/// Simulated duration of a task, at least one tick.
pub fn task_ticks<W: Workload>(workload: &W, task: TaskId, seconds_per_flop: f64) -> Time {
    let ns_per_flop = seconds_per_flop * 1e9;
    ((task_flops(workload, task) * ns_per_flop).ceil() as Time).max(1)
}
