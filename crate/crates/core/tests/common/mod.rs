//! Oracles shared by the integration tests. Nothing here calls into the
//! solver; the dense route goes through nalgebra directly.

#![allow(dead_code)]

use dissect_core::linalg::DenseMatrix;
use dissect_core::mesh::{generate_mesh, manufactured_problem, ExactSolution, ManufacturedCase, Mesh};
use dissect_core::scheduler::{Phase, TaskId, WorkerTrace};
use dissect_core::solver::NodeSystem;
use dissect_core::tree::PartitionTree;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use std::collections::{BTreeMap, BTreeSet};

pub fn problem(n: [usize; 3], p: usize, case: ManufacturedCase) -> (Mesh, ExactSolution) {
    let mut mesh = generate_mesh(n[0], n[1], n[2], [1.0; 3], p).unwrap();
    let exact = manufactured_problem(&mut mesh, case).unwrap();
    (mesh, exact)
}

/// Global system by direct superposition of the element blocks.
pub fn dense_system(mesh: &Mesh) -> (DMatrix<f64>, DVector<f64>) {
    let n = mesh.n_dofs;
    let mut k = DMatrix::zeros(n, n);
    let mut d = DVector::zeros(n);
    for e in &mesh.elements {
        for (a, &ga) in e.dof_ids.iter().enumerate() {
            d[ga] += e.load[a];
            for (b, &gb) in e.dof_ids.iter().enumerate() {
                k[(ga, gb)] += e.stiffness[(a, b)];
            }
        }
    }
    (k, d)
}

pub fn dense_solve(mesh: &Mesh) -> Vec<f64> {
    let (k, d) = dense_system(mesh);
    let chol = nalgebra::Cholesky::new(k).expect("global matrix is SPD");
    chol.solve(&d).iter().copied().collect()
}

/// `‖Ku − d‖₂ / ‖d‖₂`.
pub fn relative_residual(mesh: &Mesh, u: &[f64]) -> f64 {
    let (k, d) = dense_system(mesh);
    let r = &k * DVector::from_column_slice(u) - &d;
    r.norm() / d.norm()
}

pub fn rel_inf(a: &[f64], reference: &[f64]) -> f64 {
    let num = a.iter().zip(reference).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = reference.iter().map(|x| x.abs()).fold(0.0, f64::max);
    num / den
}

/// Random tree with `n` nodes: node `i > 0` hangs under a uniformly chosen
/// earlier node.
pub fn random_parents(rng: &mut impl Rng, n: usize) -> Vec<Option<usize>> {
    (0..n).map(|i| if i == 0 { None } else { Some(rng.gen_range(0..i)) }).collect()
}

/// `v` and all of its ancestors, by following parent pointers.
pub fn ancestors_by_walk(tree: &PartitionTree, v: usize) -> Vec<usize> {
    let mut out = vec![v];
    let mut cur = v;
    while let Some(p) = tree.nodes[cur].parent {
        out.push(p);
        cur = p;
    }
    out
}

/// Checks a two-phase schedule from timestamps alone: every task exactly
/// once, no overlap on a worker, children condensed before parents, parents
/// back-substituted before children, and back substitution after the root's
/// condensation. Returns the number of violations found.
pub fn schedule_violations(tree: &PartitionTree, traces: &[WorkerTrace]) -> (usize, Vec<String>) {
    let mut problems = Vec::new();
    let mut runs: BTreeMap<TaskId, Vec<(u64, u64)>> = BTreeMap::new();
    for t in traces {
        let mut sorted = t.intervals.clone();
        sorted.sort_by_key(|i| i.start);
        for w in sorted.windows(2) {
            if w[1].start < w[0].end {
                problems.push(format!("worker {} overlaps {} and {}", t.worker, w[0].task, w[1].task));
            }
        }
        for i in &t.intervals {
            if i.end <= i.start {
                problems.push(format!("empty interval for {}", i.task));
            }
            runs.entry(i.task).or_default().push((i.start, i.end));
        }
    }
    let expected: BTreeSet<TaskId> =
        tree.nodes.iter().flat_map(|n| [TaskId::condense(n.id), TaskId::back(n.id)]).collect();
    for task in &expected {
        match runs.get(task).map(Vec::len) {
            Some(1) => {}
            Some(k) => problems.push(format!("{task} ran {k} times")),
            None => problems.push(format!("{task} never ran")),
        }
    }
    for task in runs.keys() {
        if !expected.contains(task) {
            problems.push(format!("unknown task {task}"));
        }
    }
    let span = |t: TaskId| runs.get(&t).and_then(|v| v.first().copied());
    for n in &tree.nodes {
        for &c in &n.children {
            if let (Some(child), Some(parent)) = (span(TaskId::condense(c)), span(TaskId::condense(n.id))) {
                if child.1 > parent.0 {
                    problems.push(format!("condense {} started before child {c} finished", n.id));
                }
            }
            if let (Some(parent), Some(child)) = (span(TaskId::back(n.id)), span(TaskId::back(c))) {
                if parent.1 > child.0 {
                    problems.push(format!("back {c} started before parent {} finished", n.id));
                }
            }
        }
    }
    if let (Some(c), Some(b)) = (span(TaskId::condense(tree.root)), span(TaskId::back(tree.root))) {
        if c.1 > b.0 {
            problems.push("back substitution started before condensation finished".into());
        }
    }
    (problems.len(), problems)
}

pub fn count_phase(traces: &[WorkerTrace], phase: Phase) -> usize {
    traces.iter().map(|t| t.intervals.iter().filter(|i| i.task.phase == phase).count()).sum()
}

/// `AAᵀ + cI` with entries of `A` uniform in `[-1, 1)`.
pub fn random_spd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * (0.1 + n as f64 * 0.05)
}

pub fn to_dense(m: &DMatrix<f64>) -> DenseMatrix {
    DenseMatrix::from_row_major(m.nrows(), m.ncols(), (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect())
}

pub fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

pub fn system(k: &DMatrix<f64>, d: &[f64], n_i: usize) -> NodeSystem {
    let n = k.nrows();
    NodeSystem { node: 0, dof_ids: (0..n).collect(), k: to_dense(k), d: d.to_vec(), n_i, n_b: n - n_i }
}

pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax()
}
