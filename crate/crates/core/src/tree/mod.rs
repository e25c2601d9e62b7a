//! Spatial partition hierarchy for nested dissection.
//!
//! The domain box is split recursively: boxes whose longest/shortest edge
//! ratio exceeds the aspect threshold are bisected along their longest axis,
//! all others are split into octants. Recursion stops at boxes holding at
//! most one element centroid and empty children are pruned. Node ids are
//! assigned in pre-order with children in octant order, so they depend only
//! on element positions.

mod partition;

pub use partition::{partition_tasks, Part, TraderAssignment};

use crate::error::{Error, Result};
use crate::mesh::{Aabb, Mesh, Point};
use serde::Serialize;

const MAX_DEPTH: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub bbox: Aabb,
    pub children: Vec<usize>,
    /// Element id stored at a leaf.
    pub element: Option<usize>,
    /// DOFs eliminated at this node, ascending.
    pub eliminated_dofs: Vec<usize>,
    /// DOFs referenced in the subtree but eliminated at a proper ancestor, ascending.
    pub interface_dofs: Vec<usize>,
    pub workload: f64,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTree {
    pub nodes: Vec<TreeNode>,
    pub root: usize,
    pub depth: usize,
    /// Number of elements stored in leaves.
    pub n_elements: usize,
}

/// Dominant flop count of eliminating `n_i` unknowns from an
/// `(n_i + n_b)`-dimensional symmetric system: `n_i³/3 + n_i²·n_b + n_i·n_b²`.
pub fn estimate_workload(n_i: usize, n_b: usize) -> f64 {
    let (i, b) = (n_i as f64, n_b as f64);
    i * i * i / 3.0 + i * i * b + i * b * b
}

fn aspect_ratio(b: &Aabb) -> f64 {
    let e: Vec<f64> = (0..3).map(|d| b.extent(d)).collect();
    let longest = e.iter().cloned().fold(0.0, f64::max);
    let shortest = e.iter().cloned().fold(f64::INFINITY, f64::min);
    if shortest > 0.0 {
        longest / shortest
    } else {
        f64::INFINITY
    }
}

/// Builds the partition tree over `(element id, bounding box)` pairs.
pub fn build_tree(elements: &[(usize, Aabb)], aspect_threshold: f64) -> Result<PartitionTree> {
    if elements.is_empty() {
        return Err(Error::InvalidArgument("cannot build a tree over zero elements".into()));
    }
    if !(aspect_threshold >= 1.0) {
        return Err(Error::InvalidArgument(format!("aspect threshold must be ≥ 1, got {aspect_threshold}")));
    }
    let mut items: Vec<(usize, Point)> = elements.iter().map(|(id, b)| (*id, b.centroid())).collect();
    let mut sorted = items.clone();
    sorted.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    for w in sorted.windows(2) {
        if w[0].1 == w[1].1 {
            return Err(Error::NonSeparable { first: w[0].0.min(w[1].0), second: w[0].0.max(w[1].0) });
        }
    }
    let domain = elements[1..].iter().fold(elements[0].1, |acc, (_, b)| acc.union(b));
    items.sort_by_key(|(id, _)| *id);

    let mut nodes = Vec::new();
    split(&mut nodes, domain, items, None, 0, aspect_threshold)?;
    let depth = nodes.iter().map(|n| n.depth).max().unwrap_or(0);
    Ok(PartitionTree { nodes, root: 0, depth, n_elements: elements.len() })
}

fn split(
    nodes: &mut Vec<TreeNode>,
    bbox: Aabb,
    items: Vec<(usize, Point)>,
    parent: Option<usize>,
    depth: usize,
    threshold: f64,
) -> Result<usize> {
    let id = nodes.len();
    nodes.push(TreeNode {
        id,
        parent,
        depth,
        bbox,
        children: Vec::new(),
        element: None,
        eliminated_dofs: Vec::new(),
        interface_dofs: Vec::new(),
        workload: 0.0,
    });
    if items.len() <= 1 {
        nodes[id].element = items.first().map(|(e, _)| *e);
        return Ok(id);
    }
    if depth >= MAX_DEPTH {
        return Err(Error::NonSeparable { first: items[0].0, second: items[1].0 });
    }
    let mid = bbox.centroid();
    let axes: Vec<usize> = if aspect_ratio(&bbox) > threshold {
        let longest = (0..3).fold(0, |best, d| if bbox.extent(d) > bbox.extent(best) { d } else { best });
        vec![longest]
    } else {
        vec![0, 1, 2]
    };
    let n_children = 1 << axes.len();
    let mut buckets: Vec<Vec<(usize, Point)>> = vec![Vec::new(); n_children];
    for item in items {
        let slot = axes
            .iter()
            .enumerate()
            .fold(0, |s, (bit, &d)| if item.1[d] >= mid[d] { s | (1 << bit) } else { s });
        buckets[slot].push(item);
    }
    for (slot, bucket) in buckets.into_iter().enumerate() {
        if bucket.is_empty() {
            continue;
        }
        let mut child_box = bbox;
        for (bit, &d) in axes.iter().enumerate() {
            if slot & (1 << bit) == 0 {
                child_box.max[d] = mid[d];
            } else {
                child_box.min[d] = mid[d];
            }
        }
        let child = split(nodes, child_box, bucket, Some(id), depth + 1, threshold)?;
        nodes[id].children.push(child);
    }
    Ok(id)
}

impl PartitionTree {
    /// Tree over an explicit parent relation with empty boxes and no
    /// elements; used for synthetic scheduling workloads.
    pub fn from_parents(parents: &[Option<usize>]) -> Result<Self> {
        let n = parents.len();
        let roots: Vec<usize> = (0..n).filter(|&i| parents[i].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::InvalidArgument(format!("expected exactly one root, found {}", roots.len())));
        }
        let unit = Aabb { min: [0.0; 3], max: [1.0; 3] };
        let mut nodes: Vec<TreeNode> = (0..n)
            .map(|id| TreeNode {
                id,
                parent: parents[id],
                depth: 0,
                bbox: unit,
                children: Vec::new(),
                element: None,
                eliminated_dofs: Vec::new(),
                interface_dofs: Vec::new(),
                workload: 0.0,
            })
            .collect();
        for id in 0..n {
            if let Some(p) = parents[id] {
                if p >= n {
                    return Err(Error::InvalidArgument(format!("node {id} has out-of-range parent {p}")));
                }
                nodes[p].children.push(id);
            }
        }
        let root = roots[0];
        // depths via BFS; also detects cycles (unreached nodes)
        let mut order = vec![root];
        let mut i = 0;
        while i < order.len() {
            let v = order[i];
            for c in nodes[v].children.clone() {
                nodes[c].depth = nodes[v].depth + 1;
                order.push(c);
            }
            i += 1;
        }
        if order.len() != n {
            return Err(Error::InvalidArgument("parent relation contains a cycle".into()));
        }
        let depth = nodes.iter().map(|n| n.depth).max().unwrap_or(0);
        let n_elements = nodes.iter().filter(|n| n.is_leaf()).count();
        Ok(PartitionTree { nodes, root, depth, n_elements })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    /// Children before parents.
    pub fn postorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(self.root, false)];
        while let Some((v, expanded)) = stack.pop() {
            if expanded {
                out.push(v);
            } else {
                stack.push((v, true));
                for &c in self.nodes[v].children.iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        out
    }

    /// Parents before children.
    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            out.push(v);
            stack.extend(self.nodes[v].children.iter().rev());
        }
        out
    }

    /// `node` followed by all of its proper ancestors up to the root.
    pub fn root_path(&self, node: usize) -> Vec<usize> {
        let mut path = vec![node];
        let mut v = node;
        while let Some(p) = self.nodes[v].parent {
            path.push(p);
            v = p;
        }
        path
    }

    pub fn lca(&self, mut a: usize, mut b: usize) -> usize {
        while self.nodes[a].depth > self.nodes[b].depth {
            a = self.nodes[a].parent.unwrap();
        }
        while self.nodes[b].depth > self.nodes[a].depth {
            b = self.nodes[b].parent.unwrap();
        }
        while a != b {
            a = self.nodes[a].parent.unwrap();
            b = self.nodes[b].parent.unwrap();
        }
        a
    }

    /// Leaf node holding each element id.
    pub fn leaf_of_element(&self) -> std::collections::HashMap<usize, usize> {
        self.nodes.iter().filter_map(|n| n.element.map(|e| (e, n.id))).collect()
    }

    /// Sum of node workloads over each node's subtree, indexed by node id.
    pub fn subtree_workloads(&self) -> Vec<f64> {
        let mut acc: Vec<f64> = self.nodes.iter().map(|n| n.workload).collect();
        for v in self.postorder() {
            if let Some(p) = self.nodes[v].parent {
                acc[p] += acc[v];
            }
        }
        acc
    }

    pub fn total_workload(&self) -> f64 {
        self.nodes.iter().map(|n| n.workload).sum()
    }

    /// Annotates every node with the DOFs it eliminates (the lowest common
    /// ancestor of all leaves referencing the DOF), its interface DOFs, and
    /// the workload estimate.
    pub fn assign_dofs(&mut self, mesh: &Mesh) -> Result<()> {
        let leaf_of = self.leaf_of_element();
        for e in &mesh.elements {
            if !leaf_of.contains_key(&e.id) {
                return Err(Error::Inconsistency(format!("mesh element {} is not stored in the tree", e.id)));
            }
        }
        let mut owner: Vec<Option<usize>> = vec![None; mesh.n_dofs];
        let mut element_dofs: Vec<(usize, &[usize])> = Vec::with_capacity(leaf_of.len());
        for node in self.leaves() {
            let Some(eid) = node.element else { continue };
            let e = mesh
                .element(eid)
                .ok_or_else(|| Error::Inconsistency(format!("tree element {eid} is missing from the mesh")))?;
            element_dofs.push((node.id, &e.dof_ids));
        }
        for &(leaf, dofs) in &element_dofs {
            for &d in dofs {
                if d >= mesh.n_dofs {
                    return Err(Error::Inconsistency(format!("dof {d} out of range")));
                }
                owner[d] = Some(match owner[d] {
                    None => leaf,
                    Some(o) => self.lca(o, leaf),
                });
            }
        }
        for n in &mut self.nodes {
            n.eliminated_dofs.clear();
            n.interface_dofs.clear();
        }
        for (d, o) in owner.iter().enumerate() {
            let o = o.ok_or_else(|| Error::Inconsistency(format!("dof {d} is not referenced by any tree element")))?;
            self.nodes[o].eliminated_dofs.push(d);
        }
        let own_dofs: std::collections::HashMap<usize, &[usize]> = element_dofs.into_iter().collect();
        for v in self.postorder() {
            let mut scope: Vec<usize> = own_dofs.get(&v).map(|d| d.to_vec()).unwrap_or_default();
            for &c in &self.nodes[v].children {
                scope.extend_from_slice(&self.nodes[c].interface_dofs);
            }
            scope.sort_unstable();
            scope.dedup();
            let node = &mut self.nodes[v];
            node.interface_dofs = scope.into_iter().filter(|d| owner[*d] != Some(v)).collect();
            node.workload = estimate_workload(node.eliminated_dofs.len(), node.interface_dofs.len());
        }
        Ok(())
    }

    /// JSON dump of the node table, optionally with trader ownership.
    pub fn dump_json(&self, owner: Option<&[usize]>) -> String {
        #[derive(Serialize)]
        struct NodeDump {
            id: usize,
            parent: Option<usize>,
            depth: usize,
            bbox: Aabb,
            children: Vec<usize>,
            element: Option<usize>,
            n_eliminated: usize,
            n_interface: usize,
            workload: f64,
            #[serde(skip_serializing_if = "Option::is_none")]
            owner: Option<usize>,
        }
        let nodes: Vec<NodeDump> = self
            .nodes
            .iter()
            .map(|n| NodeDump {
                id: n.id,
                parent: n.parent,
                depth: n.depth,
                bbox: n.bbox,
                children: n.children.clone(),
                element: n.element,
                n_eliminated: n.eliminated_dofs.len(),
                n_interface: n.interface_dofs.len(),
                workload: n.workload,
                owner: owner.map(|o| o[n.id]),
            })
            .collect();
        serde_json::json!({ "root": self.root, "depth": self.depth, "n_elements": self.n_elements, "nodes": nodes })
            .to_string()
    }
}

/// Builds the tree for a mesh and annotates it with DOF ownership.
pub fn build_for_mesh(mesh: &Mesh, aspect_threshold: f64) -> Result<PartitionTree> {
    let boxes: Vec<(usize, Aabb)> = mesh.elements.iter().map(|e| (e.id, e.bbox())).collect();
    let mut tree = build_tree(&boxes, aspect_threshold)?;
    tree.assign_dofs(mesh)?;
    Ok(tree)
}
