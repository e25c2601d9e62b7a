//! What a task computes. The protocol is generic over this trait so the same
//! actors drive real condensation and cost-only synthetic trees.

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::solver::{assemble, back_substitute, condense, Contribution, EliminationRecord, ElementBlock, SchurContribution};
use crate::tree::PartitionTree;
use std::collections::HashMap;

/// Upward payload: an element block (leaf input) or a Schur contribution.
#[derive(Debug, Clone, PartialEq)]
pub enum Upward {
    Element(ElementBlock),
    Schur(SchurContribution),
}

impl Upward {
    fn contribution(&self) -> Contribution<'_> {
        match self {
            Upward::Element(e) => e.into(),
            Upward::Schur(s) => s.into(),
        }
    }
}

/// Sorted `(dof, value)` pairs.
pub type DofValues = Vec<(usize, f64)>;

fn matrix_bytes(n: usize) -> usize {
    8 * n * n
}

pub trait Workload: Sync {
    type Up: Clone + Send;
    type Record: Clone + Send;
    type Down: Clone + Send;

    fn tree(&self) -> &PartitionTree;
    /// Inputs a leaf owns before any task runs.
    fn leaf_inputs(&self, node: usize) -> Result<Vec<Self::Up>>;
    fn condense(&self, node: usize, inputs: &[Self::Up]) -> Result<(Self::Up, Self::Record)>;
    /// Input of the root's back substitution.
    fn root_input(&self) -> Self::Down;
    fn back_substitute(&self, node: usize, record: &Self::Record, input: &Self::Down) -> Result<Self::Down>;
    /// Part of a parent's output a child needs.
    fn restrict(&self, child: usize, parent_output: &Self::Down) -> Self::Down;

    /// Floating point operations of a task, used by the simulated clock.
    fn condense_flops(&self, node: usize) -> f64;
    fn back_flops(&self, node: usize) -> f64;

    fn up_bytes(&self, up: &Self::Up) -> usize;
    fn record_bytes(&self, record: &Self::Record) -> usize;
    fn down_bytes(&self, down: &Self::Down) -> usize;
}

/// Two triangular solves with the factor plus the coupling product.
pub fn back_substitution_flops(n_i: usize, n_b: usize) -> f64 {
    let (i, b) = (n_i as f64, n_b as f64);
    2.0 * i * i + 2.0 * i * b
}

/// Condensation and back substitution on a mesh.
pub struct NumericWorkload<'a> {
    tree: &'a PartitionTree,
    elements: HashMap<usize, &'a crate::mesh::Element>,
}

impl<'a> NumericWorkload<'a> {
    pub fn new(tree: &'a PartitionTree, mesh: &'a Mesh) -> Self {
        NumericWorkload { tree, elements: mesh.elements.iter().map(|e| (e.id, e)).collect() }
    }
}

impl Workload for NumericWorkload<'_> {
    type Up = Upward;
    type Record = EliminationRecord;
    type Down = DofValues;

    fn tree(&self) -> &PartitionTree {
        self.tree
    }

    fn leaf_inputs(&self, node: usize) -> Result<Vec<Upward>> {
        match self.tree.nodes[node].element {
            None => Ok(Vec::new()),
            Some(eid) => {
                let e = self
                    .elements
                    .get(&eid)
                    .ok_or_else(|| Error::Inconsistency(format!("tree element {eid} is missing from the mesh")))?;
                Ok(vec![Upward::Element(ElementBlock::from(*e))])
            }
        }
    }

    fn condense(&self, node: usize, inputs: &[Upward]) -> Result<(Upward, EliminationRecord)> {
        let contributions: Vec<Contribution<'_>> = inputs.iter().map(Upward::contribution).collect();
        let sys = assemble(&contributions, &self.tree.nodes[node])?;
        let (schur, record) = condense(&sys)?;
        Ok((Upward::Schur(schur), record))
    }

    fn root_input(&self) -> DofValues {
        Vec::new()
    }

    fn back_substitute(&self, _node: usize, record: &EliminationRecord, input: &DofValues) -> Result<DofValues> {
        let lookup = |d: usize| input.binary_search_by_key(&d, |p| p.0).ok().map(|i| input[i].1);
        let u = back_substitute(record, lookup)?;
        let mut out: DofValues = record.eliminated.iter().copied().zip(u).collect();
        out.extend_from_slice(input);
        out.sort_unstable_by_key(|p| p.0);
        Ok(out)
    }

    fn restrict(&self, child: usize, parent_output: &DofValues) -> DofValues {
        let wanted = &self.tree.nodes[child].interface_dofs;
        parent_output
            .iter()
            .filter(|(d, _)| wanted.binary_search(d).is_ok())
            .copied()
            .collect()
    }

    fn condense_flops(&self, node: usize) -> f64 {
        self.tree.nodes[node].workload
    }

    fn back_flops(&self, node: usize) -> f64 {
        let n = &self.tree.nodes[node];
        back_substitution_flops(n.eliminated_dofs.len(), n.interface_dofs.len())
    }

    fn up_bytes(&self, up: &Upward) -> usize {
        match up {
            Upward::Element(e) => matrix_bytes(e.dof_ids.len()) + 16 * e.dof_ids.len(),
            Upward::Schur(s) => matrix_bytes(s.dof_ids.len()) + 16 * s.dof_ids.len(),
        }
    }

    fn record_bytes(&self, r: &EliminationRecord) -> usize {
        let (i, b) = (r.eliminated.len(), r.interface.len());
        8 * (i * i + i * b + i + b + i) + matrix_bytes(b) + 16 * b
    }

    fn down_bytes(&self, down: &DofValues) -> usize {
        16 * down.len()
    }
}

/// Costs only; payloads are empty.
#[derive(Debug, Clone)]
pub struct SyntheticWorkload {
    pub tree: PartitionTree,
    pub condense_cost: Vec<f64>,
    pub back_cost: Vec<f64>,
}

impl SyntheticWorkload {
    /// Condensation costs from the node workloads; back substitution free.
    pub fn from_tree(tree: PartitionTree) -> Self {
        let condense_cost = tree.nodes.iter().map(|n| n.workload).collect();
        let back_cost = vec![0.0; tree.len()];
        SyntheticWorkload { tree, condense_cost, back_cost }
    }

    /// Costs from per-node eliminated/interface sizes.
    pub fn from_sizes(mut tree: PartitionTree, sizes: &[(usize, usize)]) -> Self {
        assert_eq!(sizes.len(), tree.len(), "one size pair per node");
        for (n, &(i, b)) in tree.nodes.iter_mut().zip(sizes) {
            n.workload = crate::tree::estimate_workload(i, b);
        }
        let back_cost = sizes.iter().map(|&(i, b)| back_substitution_flops(i, b)).collect();
        let condense_cost = tree.nodes.iter().map(|n| n.workload).collect();
        SyntheticWorkload { tree, condense_cost, back_cost }
    }
}

impl Workload for SyntheticWorkload {
    type Up = ();
    type Record = ();
    type Down = ();

    fn tree(&self) -> &PartitionTree {
        &self.tree
    }
    fn leaf_inputs(&self, _node: usize) -> Result<Vec<()>> {
        Ok(Vec::new())
    }
    fn condense(&self, _node: usize, _inputs: &[()]) -> Result<((), ())> {
        Ok(((), ()))
    }
    fn root_input(&self) {}
    fn back_substitute(&self, _node: usize, _record: &(), _input: &()) -> Result<()> {
        Ok(())
    }
    fn restrict(&self, _child: usize, _parent_output: &()) {}
    fn condense_flops(&self, node: usize) -> f64 {
        self.condense_cost[node]
    }
    fn back_flops(&self, node: usize) -> f64 {
        self.back_cost[node]
    }
    fn up_bytes(&self, _up: &()) -> usize {
        0
    }
    fn record_bytes(&self, _record: &()) -> usize {
        0
    }
    fn down_bytes(&self, _down: &()) -> usize {
        0
    }
}
