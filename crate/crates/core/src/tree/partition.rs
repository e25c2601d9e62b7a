//! Distribution of tree nodes among traders.

use super::PartitionTree;
use crate::error::{Error, Result};

/// A connected group of tree nodes handed to one trader.
#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    pub id: usize,
    /// Node ids, ascending.
    pub nodes: Vec<usize>,
    pub workload: f64,
    pub trader: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraderAssignment {
    pub n_traders: usize,
    pub parts: Vec<Part>,
    /// Owning trader per node id.
    pub owner: Vec<usize>,
}

impl TraderAssignment {
    /// Everything owned by trader 0.
    pub fn single(tree: &PartitionTree) -> Self {
        partition_tasks(tree, 1, 1.0).expect("k = 1 is always valid")
    }

    pub fn trader_loads(&self) -> Vec<f64> {
        let mut loads = vec![0.0; self.n_traders];
        for p in &self.parts {
            loads[p.trader] += p.workload;
        }
        loads
    }

    pub fn nodes_of(&self, trader: usize) -> Vec<usize> {
        (0..self.owner.len()).filter(|&n| self.owner[n] == trader).collect()
    }
}

/// Cuts the tree into parts and assigns them to `k_traders` traders.
///
/// Descending from the root, every subtree whose summed workload exceeds
/// `total / (k_traders · alpha)` is opened up; its root joins the upper-tree
/// fragment and its children are examined in turn. Closed subtrees and the
/// upper fragment become parts, which are handed out largest first to the
/// currently least-loaded trader (ties: fewer parts, then lower trader index;
/// equal parts are ordered by smallest node id).
pub fn partition_tasks(tree: &PartitionTree, k_traders: usize, alpha: f64) -> Result<TraderAssignment> {
    if k_traders == 0 {
        return Err(Error::InvalidArgument("need at least one trader".into()));
    }
    if !(alpha >= 1.0) {
        return Err(Error::InvalidArgument(format!("oversubscription factor must be ≥ 1, got {alpha}")));
    }
    let subtree = tree.subtree_workloads();
    let threshold = tree.total_workload() / (k_traders as f64 * alpha);

    let mut upper = Vec::new();
    let mut roots = Vec::new();
    let mut stack = vec![tree.root];
    while let Some(v) = stack.pop() {
        if subtree[v] <= threshold || tree.nodes[v].is_leaf() {
            roots.push(v);
        } else {
            upper.push(v);
            stack.extend(tree.nodes[v].children.iter().rev());
        }
    }

    let mut parts = Vec::new();
    if !upper.is_empty() {
        upper.sort_unstable();
        let workload = upper.iter().map(|&v| tree.nodes[v].workload).sum();
        parts.push(Part { id: 0, nodes: upper, workload, trader: 0 });
    }
    for r in roots {
        let mut nodes = Vec::new();
        let mut stack = vec![r];
        while let Some(v) = stack.pop() {
            nodes.push(v);
            stack.extend(&tree.nodes[v].children);
        }
        nodes.sort_unstable();
        parts.push(Part { id: parts.len(), nodes, workload: subtree[r], trader: 0 });
    }

    let mut order: Vec<usize> = (0..parts.len()).collect();
    order.sort_by(|&a, &b| {
        parts[b]
            .workload
            .partial_cmp(&parts[a].workload)
            .unwrap()
            .then(parts[a].nodes[0].cmp(&parts[b].nodes[0]))
    });
    let mut loads = vec![0.0f64; k_traders];
    let mut counts = vec![0usize; k_traders];
    for idx in order {
        let t = (0..k_traders)
            .min_by(|&a, &b| loads[a].partial_cmp(&loads[b]).unwrap().then(counts[a].cmp(&counts[b])).then(a.cmp(&b)))
            .unwrap();
        parts[idx].trader = t;
        loads[t] += parts[idx].workload;
        counts[t] += 1;
    }

    let mut owner = vec![usize::MAX; tree.len()];
    for p in &parts {
        for &v in &p.nodes {
            owner[v] = p.trader;
        }
    }
    Ok(TraderAssignment { n_traders: k_traders, parts, owner })
}
