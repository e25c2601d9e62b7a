//! Nested-dissection solve: bottom-up condensation over the partition tree,
//! top-down back substitution, re-solve after local modifications, and a
//! dense reference solve for verification.

mod cache;
mod kernels;

pub use cache::RecordCache;
pub use kernels::{
    assemble, back_substitute, condense, Contribution, ElementBlock, EliminationRecord, NodeSystem, SchurContribution,
    PIVOT_TOLERANCE,
};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::tree::PartitionTree;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

/// Elimination records keyed by tree node id.
pub type Records = BTreeMap<usize, EliminationRecord>;

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Value per global DOF id.
    pub values: Vec<f64>,
}

impl Solution {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dof_id,value\n");
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{i},{v}").unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Solution> {
        let mut values = Vec::new();
        let mut offset = 0;
        for (n, line) in text.split_inclusive('\n').enumerate() {
            let trimmed = line.trim_end();
            let bad = |message: String| Error::Format { offset, message };
            if n == 0 {
                if trimmed != "dof_id,value" {
                    return Err(bad(format!("unexpected header '{trimmed}'")));
                }
            } else if !trimmed.is_empty() {
                let (id, v) = trimmed.split_once(',').ok_or_else(|| bad("expected 'dof_id,value'".into()))?;
                let id: usize = id.parse().map_err(|_| bad(format!("bad dof id '{id}'")))?;
                if id != values.len() {
                    return Err(bad(format!("dof ids must be consecutive, got {id} after {}", values.len())));
                }
                values.push(v.parse().map_err(|_| bad(format!("bad value '{v}'")))?);
            }
            offset += line.len();
        }
        Ok(Solution { values })
    }

    pub fn bits(&self) -> Vec<u64> {
        self.values.iter().map(|v| v.to_bits()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn element_lookup(mesh: &Mesh) -> HashMap<usize, &crate::mesh::Element> {
    mesh.elements.iter().map(|e| (e.id, e)).collect()
}

/// Assembles and condenses one node from its element (leaves) or the
/// contributions stored in its children's records.
fn condense_node(
    tree: &PartitionTree,
    node: usize,
    elements: &HashMap<usize, &crate::mesh::Element>,
    records: &Records,
) -> Result<EliminationRecord> {
    let n = &tree.nodes[node];
    let mut contributions: Vec<Contribution<'_>> = Vec::with_capacity(n.children.len().max(1));
    if let Some(eid) = n.element {
        let e = elements
            .get(&eid)
            .ok_or_else(|| Error::Inconsistency(format!("tree element {eid} is missing from the mesh")))?;
        contributions.push((*e).into());
    }
    for c in &n.children {
        let r = records
            .get(c)
            .ok_or_else(|| Error::Inconsistency(format!("child {c} of node {node} has not been condensed")))?;
        contributions.push((&r.schur).into());
    }
    let sys = assemble(&contributions, n)?;
    condense(&sys).map(|(_, record)| record)
}

/// Top-down recovery of every DOF from a complete record set.
pub fn back_substitute_all(tree: &PartitionTree, records: &Records, n_dofs: usize) -> Result<Solution> {
    let mut values: Vec<Option<f64>> = vec![None; n_dofs];
    for v in tree.preorder() {
        let r = records
            .get(&v)
            .ok_or_else(|| Error::Inconsistency(format!("no elimination record for node {v}")))?;
        let u = back_substitute(r, |d| values.get(d).copied().flatten())?;
        for (&d, x) in r.eliminated.iter().zip(u) {
            values[d] = Some(x);
        }
    }
    let values = values
        .into_iter()
        .enumerate()
        .map(|(d, v)| v.ok_or(Error::IncompleteSolution { dof: d }))
        .collect::<Result<_>>()?;
    Ok(Solution { values })
}

/// Condenses the tree leaves-up, then back-substitutes root-down.
pub fn solve_sequential(tree: &PartitionTree, mesh: &Mesh) -> Result<(Solution, Records)> {
    let elements = element_lookup(mesh);
    let mut records = Records::new();
    for v in tree.postorder() {
        let r = condense_node(tree, v, &elements, &records)?;
        records.insert(v, r);
    }
    let solution = back_substitute_all(tree, &records, mesh.n_dofs)?;
    Ok((solution, records))
}

/// Applies stiffness scalings to `mesh`, re-condenses only the nodes on the
/// root paths of the modified elements (re-using every other record), and
/// back-substitutes the whole tree. Returns the solution and the number of
/// re-condensed nodes.
pub fn incremental_resolve(
    tree: &PartitionTree,
    mesh: &mut Mesh,
    records: &mut Records,
    modified_elements: &[(usize, f64)],
) -> Result<(Solution, usize)> {
    let leaf_of = tree.leaf_of_element();
    for &(id, factor) in modified_elements {
        if !leaf_of.contains_key(&id) || mesh.element(id).is_none() {
            return Err(Error::InvalidArgument(format!("unknown element id {id}")));
        }
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale factor {factor} must be positive")));
        }
    }
    let mut dirty = BTreeSet::new();
    for &(id, factor) in modified_elements {
        mesh.scale_element(id, factor)?;
        dirty.extend(tree.root_path(leaf_of[&id]));
    }
    let elements = element_lookup(mesh);
    for v in tree.postorder() {
        if dirty.contains(&v) {
            let r = condense_node(tree, v, &elements, records)?;
            records.insert(v, r);
        }
    }
    let solution = back_substitute_all(tree, records, mesh.n_dofs)?;
    Ok((solution, dirty.len()))
}

/// Global `K` and `d` by superposition of all element blocks.
pub fn assemble_global(mesh: &Mesh) -> (nalgebra::DMatrix<f64>, nalgebra::DVector<f64>) {
    let n = mesh.n_dofs;
    let mut k = nalgebra::DMatrix::zeros(n, n);
    let mut d = nalgebra::DVector::zeros(n);
    for e in &mesh.elements {
        for (r, &gr) in e.dof_ids.iter().enumerate() {
            for (c, &gc) in e.dof_ids.iter().enumerate() {
                k[(gr, gc)] += e.stiffness[(r, c)];
            }
            d[gr] += e.load[r];
        }
    }
    (k, d)
}

/// Reference solution from the fully assembled system, factorised densely.
pub fn dense_reference_solve(mesh: &Mesh) -> Result<Solution> {
    let (k, d) = assemble_global(mesh);
    let chol = k.cholesky().ok_or(Error::SingularSystem { dof: None, pivot: f64::NAN })?;
    Ok(Solution { values: chol.solve(&d).iter().copied().collect() })
}

/// `(‖K u − d‖₂, ‖d‖₂)` computed element by element.
pub fn residual_norms(mesh: &Mesh, solution: &Solution) -> (f64, f64) {
    let mut r = vec![0.0; mesh.n_dofs];
    for e in &mesh.elements {
        let local: Vec<f64> = e.dof_ids.iter().map(|&d| solution.values[d]).collect();
        let ku = e.stiffness.mul_vec(&local);
        for ((&g, kv), f) in e.dof_ids.iter().zip(ku).zip(&e.load) {
            r[g] += kv - f;
        }
    }
    let mut d = vec![0.0; mesh.n_dofs];
    for e in &mesh.elements {
        for (&g, f) in e.dof_ids.iter().zip(&e.load) {
            d[g] += f;
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm(&r), norm(&d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_mesh, manufactured_problem, ManufacturedCase};
    use crate::tree::build_for_mesh;

    fn problem(n: [usize; 3], p: usize, case: ManufacturedCase) -> (Mesh, PartitionTree) {
        let mut mesh = generate_mesh(n[0], n[1], n[2], [1.0; 3], p).unwrap();
        manufactured_problem(&mut mesh, case).unwrap();
        let tree = build_for_mesh(&mesh, 2.0).unwrap();
        (mesh, tree)
    }

    fn rel_inf(a: &Solution, b: &Solution) -> f64 {
        let diff = a.values.iter().zip(&b.values).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        diff / b.max_abs()
    }

    #[test]
    fn one_free_dof_matches_dense_exactly() {
        let (mesh, tree) = problem([2, 2, 2], 1, ManufacturedCase::Poly2);
        let (u, _) = solve_sequential(&tree, &mesh).unwrap();
        let dense = dense_reference_solve(&mesh).unwrap();
        let (k, d) = assemble_global(&mesh);
        assert_eq!(u.values.len(), 1);
        assert!((dense.values[0] - d[0] / k[(0, 0)]).abs() <= 1e-15 * dense.values[0].abs());
        assert!((u.values[0] - dense.values[0]).abs() <= 1e-15 * dense.values[0].abs());
    }

    #[test]
    fn four_cubed_p2_matches_dense() {
        let (mesh, tree) = problem([4, 4, 4], 2, ManufacturedCase::Trig);
        let (u, records) = solve_sequential(&tree, &mesh).unwrap();
        assert_eq!(records.len(), tree.len());
        let dense = dense_reference_solve(&mesh).unwrap();
        let l2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = u.values.iter().zip(&dense.values).map(|(a, b)| a - b).collect();
        assert!(l2(&diff) / l2(&dense.values) <= 1e-8);
        let (r, d) = residual_norms(&mesh, &u);
        assert!(r <= 1e-8 * d);
    }

    #[test]
    fn single_element_tree() {
        let (mesh, tree) = problem([1, 1, 1], 3, ManufacturedCase::Trig);
        assert_eq!(tree.len(), 1);
        let (u, _) = solve_sequential(&tree, &mesh).unwrap();
        let dense = dense_reference_solve(&mesh).unwrap();
        assert!(rel_inf(&u, &dense) < 1e-12);
    }

    #[test]
    fn global_matrix_is_spd() {
        let (mesh, _) = problem([3, 2, 2], 2, ManufacturedCase::Poly2);
        let (k, _) = assemble_global(&mesh);
        assert!((&k - k.transpose()).abs().max() <= 1e-14 * k.abs().max());
        let min = k.symmetric_eigenvalues().min();
        assert!(min > 0.0);
    }

    #[test]
    fn resolve_without_modifications_is_a_no_op() {
        let (mut mesh, tree) = problem([4, 2, 2], 2, ManufacturedCase::Trig);
        let (u, mut records) = solve_sequential(&tree, &mesh).unwrap();
        let before = records.clone();
        let (v, count) = incremental_resolve(&tree, &mut mesh, &mut records, &[]).unwrap();
        assert_eq!(count, 0);
        assert_eq!(u.bits(), v.bits());
        assert_eq!(records, before);
    }

    #[test]
    fn resolve_single_element_matches_from_scratch() {
        let (mut mesh, tree) = problem([4, 4, 2], 2, ManufacturedCase::Trig);
        let (_, mut records) = solve_sequential(&tree, &mesh).unwrap();
        let prior = records.clone();
        let leaf = tree.leaf_of_element()[&5];
        let (u, count) = incremental_resolve(&tree, &mut mesh, &mut records, &[(5, 2.0)]).unwrap();
        assert_eq!(count, tree.nodes[leaf].depth + 1);

        let mut fresh = generate_mesh(4, 4, 2, [1.0; 3], 2).unwrap();
        manufactured_problem(&mut fresh, ManufacturedCase::Trig).unwrap();
        fresh.scale_element(5, 2.0).unwrap();
        let (w, scratch_records) = solve_sequential(&tree, &fresh).unwrap();
        assert_eq!(u.bits(), w.bits());
        assert_eq!(records, scratch_records);
        let path = tree.root_path(leaf);
        for (id, r) in &prior {
            if !path.contains(id) {
                assert_eq!(&records[id], r);
            }
        }
    }

    #[test]
    fn resolve_rejects_unknown_elements() {
        let (mut mesh, tree) = problem([2, 2, 2], 1, ManufacturedCase::Trig);
        let (_, mut records) = solve_sequential(&tree, &mesh).unwrap();
        let err = incremental_resolve(&tree, &mut mesh, &mut records, &[(0, 2.0), (99, 2.0)]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        // nothing was applied
        assert_eq!(mesh, {
            let mut m = generate_mesh(2, 2, 2, [1.0; 3], 1).unwrap();
            manufactured_problem(&mut m, ManufacturedCase::Trig).unwrap();
            m
        });
    }

    #[test]
    fn solution_csv_round_trip() {
        let s = Solution { values: vec![0.1, -2.5e-300, 1.0 / 3.0] };
        let back = Solution::from_csv(&s.to_csv()).unwrap();
        assert_eq!(s.bits(), back.bits());
        match Solution::from_csv("dof_id,value\n0,1.0\n1,abc\n") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 19),
            other => panic!("{other:?}"),
        }
    }
}
