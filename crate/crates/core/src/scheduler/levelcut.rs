//! Static level-cut baseline: every subtree below a cut level is pinned to
//! one worker, nodes above the cut run on the worker of their first child,
//! and each worker processes its tasks in tree order without rebalancing.

use super::protocol::task_ticks;
use super::{Interval, LatencyModel, Phase, RunOutput, TaskId, Time, TransportStats, WorkerTrace, Workload};
use crate::error::{Error, Result};
use crate::tree::PartitionTree;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaticPlan {
    pub cut_level: usize,
    /// Roots of the pinned subtrees, ascending.
    pub cut: Vec<usize>,
    /// Worker of every node.
    pub owner: Vec<usize>,
}

/// Cuts at the shallowest level with at least `n_workers` independent
/// subtrees (leaves above the level count as subtrees) and deals them out
/// round-robin by node id.
pub fn levelcut_owners(tree: &PartitionTree, n_workers: usize) -> Result<StaticPlan> {
    if n_workers == 0 {
        return Err(Error::InvalidArgument("at least one worker is required".into()));
    }
    let in_cut = |level: usize| {
        move |n: &&crate::tree::TreeNode| n.depth == level || (n.is_leaf() && n.depth < level)
    };
    let cut_level = (0..=tree.depth)
        .find(|&l| tree.nodes.iter().filter(in_cut(l)).count() >= n_workers)
        .unwrap_or(tree.depth);
    let cut: Vec<usize> = tree.nodes.iter().filter(in_cut(cut_level)).map(|n| n.id).collect();

    let mut owner = vec![usize::MAX; tree.len()];
    for (i, &c) in cut.iter().enumerate() {
        owner[c] = i % n_workers;
    }
    for v in tree.preorder() {
        if let Some(p) = tree.nodes[v].parent {
            if owner[v] == usize::MAX && tree.nodes[p].depth >= cut_level {
                owner[v] = owner[p];
            }
        }
    }
    for v in tree.postorder() {
        if owner[v] == usize::MAX {
            owner[v] = owner[tree.nodes[v].children[0]];
        }
    }
    Ok(StaticPlan { cut_level, cut, owner })
}

/// List-schedules both phases of `workload` under the static plan in
/// simulated time; results crossing workers pay `latency`.
pub fn run_static_levelcut<W: Workload>(
    workload: &W,
    n_workers: usize,
    latency: LatencyModel,
    seconds_per_flop: f64,
) -> Result<RunOutput<W>> {
    let tree = workload.tree();
    let plan = levelcut_owners(tree, n_workers)?;
    let ticks = |task: TaskId| task_ticks(workload, task, seconds_per_flop);
    let mut free = vec![0 as Time; n_workers];
    let mut traces: Vec<WorkerTrace> = (0..n_workers).map(|worker| WorkerTrace { worker, intervals: Vec::new() }).collect();
    let mut ready_at = BTreeMap::new();
    let mut stats = TransportStats::default();

    let mut ups: BTreeMap<usize, (W::Up, Time)> = BTreeMap::new();
    let mut records = BTreeMap::new();
    let mut done_at = vec![0 as Time; tree.len()];
    for v in tree.postorder() {
        let w = plan.owner[v];
        let mut inputs = workload.leaf_inputs(v)?;
        let mut ready: Time = 0;
        for &c in &tree.nodes[v].children {
            let (up, at) = ups.remove(&c).expect("children precede parents in postorder");
            let mut at = at;
            if plan.owner[c] != w {
                let bytes = workload.up_bytes(&up);
                stats.record(super::Addr::Worker(plan.owner[c]), super::Addr::Worker(w), "ResultForward", bytes);
                at += latency.delay(bytes);
            }
            ready = ready.max(at);
            inputs.push(up);
        }
        let task = TaskId::condense(v);
        ready_at.insert(task, ready);
        let start = free[w].max(ready);
        let end = start + ticks(task);
        free[w] = end;
        traces[w].intervals.push(Interval { start, end, task });
        let (up, record) = workload.condense(v, &inputs)?;
        ups.insert(v, (up, end));
        records.insert(v, record);
        done_at[v] = end;
    }
    let condense_end = done_at[tree.root];

    let mut downs: BTreeMap<usize, (W::Down, Time)> = BTreeMap::new();
    let mut outputs = BTreeMap::new();
    let mut back_start = Time::MAX;
    let mut back_end = condense_end;
    for v in tree.preorder() {
        let w = plan.owner[v];
        let (input, mut ready) = match tree.nodes[v].parent {
            None => (workload.root_input(), condense_end),
            Some(_) => downs.remove(&v).expect("parents precede children in preorder"),
        };
        let task = TaskId::back(v);
        if let Some(p) = tree.nodes[v].parent {
            if plan.owner[p] != w {
                let bytes = workload.down_bytes(&input);
                stats.record(super::Addr::Worker(plan.owner[p]), super::Addr::Worker(w), "ResultForward", bytes);
                ready += latency.delay(bytes);
            }
        }
        ready_at.insert(task, ready);
        let start = free[w].max(ready);
        let end = start + ticks(task);
        free[w] = end;
        back_start = back_start.min(start);
        back_end = back_end.max(end);
        traces[w].intervals.push(Interval { start, end, task });
        let out = workload.back_substitute(v, &records[&v], &input)?;
        for &c in &tree.nodes[v].children {
            downs.insert(c, (workload.restrict(c, &out), end));
        }
        outputs.insert(v, out);
    }

    for t in &mut traces {
        t.intervals.sort_by_key(|i| i.start);
    }
    let first_start = traces.iter().flat_map(|t| t.intervals.iter()).map(|i| i.start).min().unwrap_or(0);
    let mut windows = BTreeMap::new();
    windows.insert(Phase::Condense, (first_start, condense_end));
    windows.insert(Phase::BackSubstitute, (back_start.min(back_end), back_end));
    Ok(RunOutput { traces, records, outputs, ready_at, windows, stats })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_tree(branching: usize, depth: usize) -> PartitionTree {
        let mut parents = vec![None];
        let mut frontier = vec![0];
        for _ in 0..depth {
            let mut next = Vec::new();
            for &p in &frontier {
                for _ in 0..branching {
                    next.push(parents.len());
                    parents.push(Some(p));
                }
            }
            frontier = next;
        }
        PartitionTree::from_parents(&parents).unwrap()
    }

    #[test]
    fn cut_level_matches_worker_count() {
        let t = full_tree(8, 2);
        assert_eq!(levelcut_owners(&t, 1).unwrap().cut_level, 0);
        assert_eq!(levelcut_owners(&t, 8).unwrap().cut_level, 1);
        let plan = levelcut_owners(&t, 16).unwrap();
        assert_eq!(plan.cut_level, 2);
        assert_eq!(plan.cut.len(), 64);
        for &c in &plan.cut {
            let sub: Vec<usize> = t.preorder().into_iter().filter(|&v| t.root_path(v).contains(&c)).collect();
            assert!(sub.iter().all(|&v| plan.owner[v] == plan.owner[c]));
        }
        assert!(levelcut_owners(&t, 0).is_err());
    }

    #[test]
    fn upper_nodes_follow_their_first_child() {
        let t = full_tree(2, 3);
        let plan = levelcut_owners(&t, 4).unwrap();
        assert_eq!(plan.cut_level, 2);
        for n in &t.nodes {
            if n.depth < plan.cut_level {
                assert_eq!(plan.owner[n.id], plan.owner[n.children[0]]);
            }
        }
    }

    #[test]
    fn static_schedule_respects_dependencies() {
        let mut t = full_tree(8, 2);
        for n in &mut t.nodes {
            n.workload = 10.0 + n.id as f64;
        }
        let w = super::super::SyntheticWorkload::from_tree(t);
        let out = run_static_levelcut(&w, 16, LatencyModel::default(), 1e-9).unwrap();
        let mut end = BTreeMap::new();
        for tr in &out.traces {
            for i in &tr.intervals {
                end.insert(i.task, i.end);
            }
        }
        for tr in &out.traces {
            for win in tr.intervals.windows(2) {
                assert!(win[0].end <= win[1].start);
            }
            for i in &tr.intervals {
                if i.task.phase == Phase::Condense {
                    for &c in &w.tree.nodes[i.task.node].children {
                        assert!(end[&TaskId::condense(c)] <= i.start);
                    }
                }
            }
        }
        assert_eq!(end.len(), 2 * w.tree.len());
    }
}
