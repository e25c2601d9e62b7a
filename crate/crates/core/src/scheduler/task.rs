//! Tasks and the per-trader dependency-tracking priority queue.

use crate::error::{Error, Result};
use crate::tree::{PartitionTree, TraderAssignment};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    /// Bottom-up Schur complement computation.
    Condense,
    /// Top-down recovery of eliminated unknowns.
    BackSubstitute,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Condense => "condense",
            Phase::BackSubstitute => "backsub",
        }
    }
}

/// Task identity: one tree node in one phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskId {
    pub node: usize,
    pub phase: Phase,
}

impl TaskId {
    pub fn condense(node: usize) -> Self {
        TaskId { node, phase: Phase::Condense }
    }

    pub fn back(node: usize) -> Self {
        TaskId { node, phase: Phase::BackSubstitute }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.phase.as_str(), self.node)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskState {
    Blocked,
    Ready,
    Running,
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: usize,
    pub owner: usize,
    pub deps_unmet: usize,
    pub state: TaskState,
    /// `+∞` while blocked, `−workload` once ready.
    pub priority: f64,
    pub workload: f64,
}

#[derive(Debug, PartialEq)]
struct ReadyEntry {
    priority: f64,
    id: usize,
}

impl Eq for ReadyEntry {}

impl Ord for ReadyEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap: lowest priority value first, then smallest id
        other.priority.total_cmp(&self.priority).then(other.id.cmp(&self.id))
    }
}

impl PartialOrd for ReadyEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The tasks of one trader for one phase.
#[derive(Debug)]
pub struct TraderQueue {
    pub trader: usize,
    pub phase: Phase,
    tasks: BTreeMap<usize, Task>,
    ready: BinaryHeap<ReadyEntry>,
}

impl TraderQueue {
    fn new(trader: usize, phase: Phase) -> Self {
        TraderQueue { trader, phase, tasks: BTreeMap::new(), ready: BinaryHeap::new() }
    }

    fn insert(&mut self, id: usize, deps: usize, workload: f64) {
        let ready = deps == 0;
        self.tasks.insert(
            id,
            Task {
                id,
                owner: self.trader,
                deps_unmet: deps,
                state: if ready { TaskState::Ready } else { TaskState::Blocked },
                priority: if ready { -workload } else { f64::INFINITY },
                workload,
            },
        );
        if ready {
            self.ready.push(ReadyEntry { priority: -workload, id });
        }
    }

    pub fn task(&self, id: usize) -> Option<&Task> {
        self.tasks.get(&id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn n_ready(&self) -> usize {
        self.ready.len()
    }

    pub fn all_done(&self) -> bool {
        self.tasks.values().all(|t| t.state == TaskState::Done)
    }

    /// Most urgent ready task (largest workload, then smallest id), removed
    /// from the ready set; it stays `Ready` until started.
    pub fn pop_ready(&mut self) -> Option<usize> {
        self.ready.pop().map(|e| e.id)
    }

    fn get_mut(&mut self, id: usize) -> Result<&mut Task> {
        let (trader, phase) = (self.trader, self.phase);
        self.tasks
            .get_mut(&id)
            .ok_or_else(|| Error::ProtocolViolation(format!("trader {trader} does not own {phase:?} task {id}")))
    }

    pub fn start(&mut self, id: usize) -> Result<()> {
        let t = self.get_mut(id)?;
        if t.state != TaskState::Ready {
            return Err(Error::ProtocolViolation(format!("task {id} started while {:?}", t.state)));
        }
        t.state = TaskState::Running;
        Ok(())
    }

    pub fn finish(&mut self, id: usize) -> Result<()> {
        let t = self.get_mut(id)?;
        if t.state != TaskState::Running {
            return Err(Error::ProtocolViolation(format!("duplicate or unexpected completion of task {id} ({:?})", t.state)));
        }
        t.state = TaskState::Done;
        Ok(())
    }

    /// Records one fulfilled dependency; returns `true` when the task just
    /// became ready.
    pub fn dependency_met(&mut self, id: usize) -> Result<bool> {
        let t = self.get_mut(id)?;
        if t.deps_unmet == 0 || t.state != TaskState::Blocked {
            return Err(Error::ProtocolViolation(format!("task {id} received a dependency it was not waiting for")));
        }
        t.deps_unmet -= 1;
        if t.deps_unmet > 0 {
            return Ok(false);
        }
        t.state = TaskState::Ready;
        t.priority = -t.workload;
        let entry = ReadyEntry { priority: t.priority, id };
        self.ready.push(entry);
        Ok(true)
    }
}

/// One queue per trader for the given phase. Condensation tasks wait for
/// their children; back-substitution tasks wait for one event (the node's
/// own condensation for the root, the parent's back substitution otherwise).
pub fn build_task_graph(tree: &PartitionTree, assignment: &TraderAssignment, phase: Phase) -> Vec<TraderQueue> {
    let mut queues: Vec<TraderQueue> = (0..assignment.n_traders).map(|t| TraderQueue::new(t, phase)).collect();
    for node in &tree.nodes {
        let deps = match phase {
            Phase::Condense => node.children.len(),
            Phase::BackSubstitute => 1,
        };
        queues[assignment.owner[node.id]].insert(node.id, deps, node.workload);
    }
    queues
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::partition_tasks;

    fn star(children: usize) -> PartitionTree {
        let mut parents = vec![None];
        parents.extend(std::iter::repeat_n(Some(0), children));
        let mut t = PartitionTree::from_parents(&parents).unwrap();
        for (i, n) in t.nodes.iter_mut().enumerate() {
            n.workload = i as f64;
        }
        t
    }

    #[test]
    fn leaves_ready_and_root_blocked() {
        let t = star(8);
        let a = TraderAssignment::single(&t);
        let q = &build_task_graph(&t, &a, Phase::Condense)[0];
        assert_eq!(q.task(0).unwrap().deps_unmet, 8);
        assert_eq!(q.task(0).unwrap().priority, f64::INFINITY);
        for leaf in 1..=8 {
            let task = q.task(leaf).unwrap();
            assert_eq!(task.deps_unmet, 0);
            assert!(task.priority.is_finite());
            assert_eq!(task.state, TaskState::Ready);
        }
        assert_eq!(q.n_ready(), 8);
    }

    #[test]
    fn each_trader_holds_exactly_its_tasks() {
        let t = star(8);
        let a = partition_tasks(&t, 3, 2.0).unwrap();
        let qs = build_task_graph(&t, &a, Phase::Condense);
        assert_eq!(qs.iter().map(|q| q.len()).sum::<usize>(), 9);
        for q in &qs {
            assert!(q.tasks().all(|task| a.owner[task.id] == q.trader));
        }
    }

    #[test]
    fn ready_order_is_largest_workload_then_id() {
        let mut t = star(4);
        t.nodes[2].workload = 4.0; // ties with node 4
        let qs = build_task_graph(&t, &TraderAssignment::single(&t), Phase::Condense);
        let mut q = qs.into_iter().next().unwrap();
        let order: Vec<usize> = std::iter::from_fn(|| q.pop_ready()).collect();
        assert_eq!(order, vec![2, 4, 3, 1]);
    }

    #[test]
    fn dependency_countdown() {
        let t = star(3);
        let mut q = build_task_graph(&t, &TraderAssignment::single(&t), Phase::Condense).remove(0);
        assert!(!q.dependency_met(0).unwrap());
        assert!(!q.dependency_met(0).unwrap());
        assert_eq!(q.task(0).unwrap().deps_unmet, 1);
        assert_eq!(q.task(0).unwrap().priority, f64::INFINITY);
        assert!(q.dependency_met(0).unwrap());
        assert_eq!(q.task(0).unwrap().priority, -0.0);
        assert!(q.dependency_met(0).is_err());
    }

    #[test]
    fn state_machine_rejects_duplicates() {
        let t = star(1);
        let mut q = build_task_graph(&t, &TraderAssignment::single(&t), Phase::Condense).remove(0);
        assert!(q.finish(1).is_err());
        q.start(1).unwrap();
        assert!(q.start(1).is_err());
        q.finish(1).unwrap();
        assert!(matches!(q.finish(1), Err(Error::ProtocolViolation(_))));
        assert!(q.start(0).is_err());
    }
}
