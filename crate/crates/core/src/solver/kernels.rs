//! Per-node kernels: assembly, static condensation, back substitution.

use crate::error::{Error, Result};
use crate::linalg::{backward_solve_transposed, forward_solve, DenseMatrix};
use crate::mesh::Element;
use crate::tree::TreeNode;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Pivots at or below this fraction of the largest eliminated diagonal
/// entry are treated as singular.
pub const PIVOT_TOLERANCE: f64 = 1e-13;

/// Local equation system `K u = d` of one tree node. The first `n_i`
/// unknowns are eliminated here, the remaining `n_b` are interface unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSystem {
    pub node: usize,
    pub dof_ids: Vec<usize>,
    pub k: DenseMatrix,
    pub d: Vec<f64>,
    pub n_i: usize,
    pub n_b: usize,
}

/// Condensed interface system passed from a node to its parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchurContribution {
    pub source: usize,
    pub dof_ids: Vec<usize>,
    pub s: DenseMatrix,
    pub g: Vec<f64>,
}

/// Everything needed to recover a node's eliminated unknowns from its
/// interface values, plus the contribution it produced (for re-use).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EliminationRecord {
    pub node: usize,
    pub eliminated: Vec<usize>,
    pub interface: Vec<usize>,
    /// Lower Cholesky factor of `K_ii`.
    pub factor: DenseMatrix,
    /// `K_ib`, `n_i × n_b`.
    pub coupling: DenseMatrix,
    /// `d_i`.
    pub rhs: Vec<f64>,
    pub schur: SchurContribution,
}

/// Owned element matrix block, as shipped to a worker.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementBlock {
    pub element: usize,
    pub dof_ids: Vec<usize>,
    pub k: DenseMatrix,
    pub f: Vec<f64>,
}

impl From<&Element> for ElementBlock {
    fn from(e: &Element) -> Self {
        ElementBlock { element: e.id, dof_ids: e.dof_ids.clone(), k: e.stiffness.clone(), f: e.load.clone() }
    }
}

/// A summand of a node system.
#[derive(Debug, Clone, Copy)]
pub enum Contribution<'a> {
    Element { id: usize, dof_ids: &'a [usize], k: &'a DenseMatrix, f: &'a [f64] },
    Schur(&'a SchurContribution),
}

impl<'a> Contribution<'a> {
    fn key(&self) -> (u8, usize) {
        match self {
            Contribution::Element { id, .. } => (0, *id),
            Contribution::Schur(s) => (1, s.source),
        }
    }

    fn parts(&self) -> (&'a [usize], &'a DenseMatrix, &'a [f64]) {
        match *self {
            Contribution::Element { dof_ids, k, f, .. } => (dof_ids, k, f),
            Contribution::Schur(s) => (&s.dof_ids, &s.s, &s.g),
        }
    }
}

impl<'a> From<&'a Element> for Contribution<'a> {
    fn from(e: &'a Element) -> Self {
        Contribution::Element { id: e.id, dof_ids: &e.dof_ids, k: &e.stiffness, f: &e.load }
    }
}

impl<'a> From<&'a ElementBlock> for Contribution<'a> {
    fn from(e: &'a ElementBlock) -> Self {
        Contribution::Element { id: e.element, dof_ids: &e.dof_ids, k: &e.k, f: &e.f }
    }
}

impl<'a> From<&'a SchurContribution> for Contribution<'a> {
    fn from(s: &'a SchurContribution) -> Self {
        Contribution::Schur(s)
    }
}

/// Sums contributions into the node's local system. Contributions are added
/// in ascending source order and each one entry by entry in row-major order,
/// so the result does not depend on the order of `contributions`.
pub fn assemble(contributions: &[Contribution<'_>], node: &TreeNode) -> Result<NodeSystem> {
    let n_i = node.eliminated_dofs.len();
    let n_b = node.interface_dofs.len();
    let dof_ids: Vec<usize> = node.eliminated_dofs.iter().chain(&node.interface_dofs).copied().collect();
    let local: HashMap<usize, usize> = dof_ids.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let n = n_i + n_b;
    let mut k = DenseMatrix::zeros(n, n);
    let mut d = vec![0.0; n];

    let mut sorted: Vec<&Contribution<'_>> = contributions.iter().collect();
    sorted.sort_by_key(|c| c.key());
    for c in sorted {
        let (ids, m, f) = c.parts();
        let map: Vec<usize> = ids
            .iter()
            .map(|dof| local.get(dof).copied().ok_or(Error::AssemblyScope { dof: *dof, node: node.id }))
            .collect::<Result<_>>()?;
        for (r, &lr) in map.iter().enumerate() {
            let row = m.row(r);
            for (c, &lc) in map.iter().enumerate() {
                k[(lr, lc)] += row[c];
            }
            d[lr] += f[r];
        }
    }
    Ok(NodeSystem { node: node.id, dof_ids, k, d, n_i, n_b })
}

/// Eliminates the leading `n_i` unknowns by a partial Cholesky
/// factorisation, producing `S = K_bb − K_bi K_ii⁻¹ K_ib` and
/// `g = d_b − K_bi K_ii⁻¹ d_i`.
pub fn condense(sys: &NodeSystem) -> Result<(SchurContribution, EliminationRecord)> {
    let (n_i, n_b) = (sys.n_i, sys.n_b);
    let k = &sys.k;

    let max_diag = (0..n_i).fold(0.0f64, |m, j| m.max(k[(j, j)].abs()));
    let tol = PIVOT_TOLERANCE * max_diag;
    let mut l = DenseMatrix::zeros(n_i, n_i);
    for j in 0..n_i {
        let mut pivot = k[(j, j)];
        for p in 0..j {
            pivot -= l[(j, p)] * l[(j, p)];
        }
        if !(pivot > tol) {
            return Err(Error::SingularSystem { dof: Some(sys.dof_ids[j]), pivot });
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n_i {
            let mut s = k[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / ljj;
        }
    }

    // W = L⁻¹ K_ib, one row at a time
    let mut coupling = DenseMatrix::zeros(n_i, n_b);
    let mut w = DenseMatrix::zeros(n_i, n_b);
    for i in 0..n_i {
        for b in 0..n_b {
            coupling[(i, b)] = k[(i, n_i + b)];
        }
        let mut row = coupling.row(i).to_vec();
        for p in 0..i {
            let lip = l[(i, p)];
            if lip != 0.0 {
                for (r, wp) in row.iter_mut().zip(w.row(p)) {
                    *r -= lip * wp;
                }
            }
        }
        let lii = l[(i, i)];
        for (b, r) in row.into_iter().enumerate() {
            w[(i, b)] = r / lii;
        }
    }

    let mut s = DenseMatrix::zeros(n_b, n_b);
    for a in 0..n_b {
        for b in 0..=a {
            s[(a, b)] = k[(n_i + a, n_i + b)];
        }
    }
    for p in 0..n_i {
        let wp = w.row(p);
        for a in 0..n_b {
            let wa = wp[a];
            if wa != 0.0 {
                for b in 0..=a {
                    s[(a, b)] -= wa * wp[b];
                }
            }
        }
    }
    for a in 0..n_b {
        for b in 0..a {
            s[(b, a)] = s[(a, b)];
        }
    }

    let rhs: Vec<f64> = sys.d[..n_i].to_vec();
    let mut y = rhs.clone();
    forward_solve(&l, &mut y);
    let mut g: Vec<f64> = sys.d[n_i..].to_vec();
    for p in 0..n_i {
        let yp = y[p];
        for (gb, wb) in g.iter_mut().zip(w.row(p)) {
            *gb -= wb * yp;
        }
    }

    let schur = SchurContribution { source: sys.node, dof_ids: sys.dof_ids[n_i..].to_vec(), s, g };
    let record = EliminationRecord {
        node: sys.node,
        eliminated: sys.dof_ids[..n_i].to_vec(),
        interface: sys.dof_ids[n_i..].to_vec(),
        factor: l,
        coupling,
        rhs,
        schur: schur.clone(),
    };
    Ok((schur, record))
}

/// Recovers `u_i = K_ii⁻¹ (d_i − K_ib u_b)`; `lookup` supplies interface values
/// by global DOF id.
pub fn back_substitute(record: &EliminationRecord, lookup: impl Fn(usize) -> Option<f64>) -> Result<Vec<f64>> {
    let u_b: Vec<f64> = record
        .interface
        .iter()
        .map(|&d| lookup(d).ok_or(Error::IncompleteSolution { dof: d }))
        .collect::<Result<_>>()?;
    let mut r = record.rhs.clone();
    for (i, ri) in r.iter_mut().enumerate() {
        for (kib, ub) in record.coupling.row(i).iter().zip(&u_b) {
            *ri -= kib * ub;
        }
    }
    forward_solve(&record.factor, &mut r);
    backward_solve_transposed(&record.factor, &mut r);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Aabb;

    fn node(id: usize, eliminated: Vec<usize>, interface: Vec<usize>) -> TreeNode {
        TreeNode {
            id,
            parent: None,
            depth: 0,
            bbox: Aabb { min: [0.0; 3], max: [1.0; 3] },
            children: vec![],
            element: None,
            eliminated_dofs: eliminated,
            interface_dofs: interface,
            workload: 0.0,
        }
    }

    fn schur(source: usize, dofs: Vec<usize>, s: Vec<f64>, g: Vec<f64>) -> SchurContribution {
        let n = dofs.len();
        SchurContribution { source, dof_ids: dofs, s: DenseMatrix::from_row_major(n, n, s), g }
    }

    fn system(k: Vec<f64>, d: Vec<f64>, n_i: usize) -> NodeSystem {
        let n = d.len();
        NodeSystem { node: 0, dof_ids: (0..n).collect(), k: DenseMatrix::from_row_major(n, n, k), d, n_i, n_b: n - n_i }
    }

    #[test]
    fn scalar_superposition() {
        let a = schur(1, vec![7], vec![3.0], vec![1.0]);
        let b = schur(2, vec![7], vec![4.0], vec![2.0]);
        let sys = assemble(&[(&a).into(), (&b).into()], &node(0, vec![7], vec![])).unwrap();
        assert_eq!(sys.k.as_slice(), &[7.0]);
        assert_eq!(sys.d, vec![3.0]);
    }

    #[test]
    fn disjoint_contributions_are_block_diagonal() {
        let a = schur(1, vec![1, 2], vec![2.0, 1.0, 1.0, 2.0], vec![0.0, 0.0]);
        let b = schur(2, vec![5], vec![3.0], vec![0.0]);
        let sys = assemble(&[(&a).into(), (&b).into()], &node(0, vec![1, 5], vec![2])).unwrap();
        // local order: 1, 5, 2
        assert_eq!(sys.k.as_slice(), &[2.0, 0.0, 1.0, 0.0, 3.0, 0.0, 1.0, 0.0, 2.0]);
    }

    #[test]
    fn assembly_is_order_independent_bitwise() {
        let a = schur(3, vec![0, 1], vec![0.1, 0.2, 0.2, 0.7], vec![0.3, 1e-17]);
        let b = schur(1, vec![1, 0], vec![1e16, 0.3, 0.3, 0.9], vec![-0.3, 1.0]);
        let c = schur(2, vec![1], vec![-1e16], vec![0.1]);
        let n = node(0, vec![0, 1], vec![]);
        let x = assemble(&[(&a).into(), (&b).into(), (&c).into()], &n).unwrap();
        let y = assemble(&[(&c).into(), (&a).into(), (&b).into()], &n).unwrap();
        let bits = |s: &NodeSystem| s.k.as_slice().iter().chain(&s.d).map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x), bits(&y));
    }

    #[test]
    fn out_of_scope_dof_is_rejected() {
        let a = schur(1, vec![9], vec![1.0], vec![0.0]);
        assert_eq!(
            assemble(&[(&a).into()], &node(4, vec![1], vec![2])).unwrap_err(),
            Error::AssemblyScope { dof: 9, node: 4 }
        );
    }

    #[test]
    fn empty_elimination_passes_system_through() {
        let sys = system(vec![2.0, 1.0, 1.0, 2.0], vec![1.0, 0.0], 0);
        let (s, r) = condense(&sys).unwrap();
        assert_eq!(s.s, sys.k);
        assert_eq!(s.g, sys.d);
        assert!(r.eliminated.is_empty());
    }

    #[test]
    fn two_by_two_schur_and_back_substitution() {
        let sys = system(vec![2.0, 1.0, 1.0, 2.0], vec![1.0, 0.0], 1);
        let (s, r) = condense(&sys).unwrap();
        assert!((s.s[(0, 0)] - 1.5).abs() < 1e-15);
        assert!((s.g[0] + 0.5).abs() < 1e-15);
        let ub = s.g[0] / s.s[(0, 0)];
        assert!((ub + 1.0 / 3.0).abs() < 1e-15);
        let ui = back_substitute(&r, |d| (d == 1).then_some(ub)).unwrap();
        assert!((ui[0] - 2.0 / 3.0).abs() < 1e-15);
        // K [2/3, -1/3] = [1, 0]
        let res = sys.k.mul_vec(&[ui[0], ub]);
        assert!((res[0] - 1.0).abs() < 1e-15 && res[1].abs() < 1e-15);
    }

    #[test]
    fn root_back_substitution_and_zero_rhs() {
        let sys = system(vec![4.0, 2.0, 2.0, 3.0], vec![2.0, 1.0], 2);
        let (_, r) = condense(&sys).unwrap();
        let u = back_substitute(&r, |_| None).unwrap();
        let res = sys.k.mul_vec(&u);
        assert!((res[0] - 2.0).abs() < 1e-14 && (res[1] - 1.0).abs() < 1e-14);

        let sys = system(vec![4.0, 2.0, 1.0, 2.0, 3.0, 0.5, 1.0, 0.5, 2.0], vec![0.0; 3], 2);
        let (s, r) = condense(&sys).unwrap();
        assert_eq!(s.g, vec![0.0]);
        assert_eq!(back_substitute(&r, |_| Some(0.0)).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn missing_interface_value() {
        let sys = system(vec![2.0, 1.0, 1.0, 2.0], vec![1.0, 0.0], 1);
        let (_, r) = condense(&sys).unwrap();
        assert_eq!(back_substitute(&r, |_| None), Err(Error::IncompleteSolution { dof: 1 }));
    }

    #[test]
    fn singular_pivot_names_the_dof() {
        let mut sys = system(vec![1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![0.0; 3], 2);
        sys.dof_ids = vec![10, 11, 12];
        match condense(&sys) {
            Err(Error::SingularSystem { dof: Some(11), .. }) => {}
            other => panic!("expected singular pivot at dof 11, got {other:?}"),
        }
    }
}
