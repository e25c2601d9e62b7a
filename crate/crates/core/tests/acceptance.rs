//! Acceptance suite. Each test prints one `PASS`/`FAIL` line to stderr and
//! then asserts, so every verdict shows even when one fails.

mod common;

use common::*;
use dissect_core::mesh::{Aabb, ManufacturedCase};
use dissect_core::metrics::{level_cut_profile, report, ReportInput};
use dissect_core::scheduler::{
    run_parallel, run_protocol, run_static_levelcut, Clock, LatencyModel, Phase, SchedulerConfig, SyntheticWorkload,
};
use dissect_core::solver::{condense, incremental_resolve, solve_sequential};
use dissect_core::tree::{build_for_mesh, build_tree, partition_tasks, PartitionTree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::io::Write;
use std::time::{Duration, Instant};

/// Written to the stderr handle directly so the line survives output capture.
fn verdict(id: u32, name: &str, ok: bool, detail: &str) -> bool {
    let line = format!("[{}] AC{id} {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    ok
}

fn within(start: Instant, budget_s: u64) -> (bool, Duration) {
    let e = start.elapsed();
    (e <= Duration::from_secs(budget_s), e)
}

#[test]
fn ac1_oracle_equivalence() {
    const TOL: f64 = 1e-8;
    let start = Instant::now();
    let cases: &[([usize; 3], usize)] = &[
        ([2, 2, 2], 1),
        ([4, 4, 4], 1),
        ([8, 8, 8], 1),
        // the 4x1x1 bar has no free DOFs at p = 1
        ([2, 2, 2], 2),
        ([4, 4, 4], 2),
        ([6, 6, 6], 2),
        ([8, 8, 4], 2),
        ([4, 1, 1], 2),
        ([2, 2, 2], 3),
        ([4, 4, 3], 3),
        ([4, 4, 4], 3),
        ([5, 4, 4], 3),
        ([4, 1, 1], 3),
    ];
    let mut worst_err: f64 = 0.0;
    let mut worst_res: f64 = 0.0;
    let mut failures = Vec::new();
    for &(n, p) in cases {
        for case in [ManufacturedCase::Trig, ManufacturedCase::Poly2] {
            let (mesh, _) = problem(n, p, case);
            assert!(mesh.n_dofs <= 2000, "{n:?} p={p} has {} dofs", mesh.n_dofs);
            let tree = build_for_mesh(&mesh, 2.0).unwrap();
            let (nd, _) = solve_sequential(&tree, &mesh).unwrap();
            let dense = dense_solve(&mesh);
            let err = rel_inf(&nd.values, &dense);
            let res = relative_residual(&mesh, &nd.values);
            worst_err = worst_err.max(err);
            worst_res = worst_res.max(res);
            if !(err <= TOL && res <= TOL) {
                failures.push(format!("{n:?} p={p} {case:?}: err {err:e} res {res:e}"));
            }
        }
    }
    let (fast, elapsed) = within(start, 60);
    let ok = verdict(
        1,
        "oracle equivalence",
        failures.is_empty() && fast,
        &format!(
            "{} meshes, max rel err {worst_err:.2e}, max rel residual {worst_res:.2e} (tol {TOL:e}), {:.1}s (budget 60s)",
            2 * cases.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok, "{failures:?}");
}

#[test]
fn ac2_determinism() {
    let start = Instant::now();
    let (mesh, _) = problem([8, 8, 8], 2, ManufacturedCase::Trig);
    let tree = build_for_mesh(&mesh, 2.0).unwrap();
    let (seq, _) = solve_sequential(&tree, &mesh).unwrap();
    let mut mismatches = Vec::new();
    let mut runs = 0;
    for traders in [1, 2, 4] {
        let assignment = partition_tasks(&tree, traders, 2.0).unwrap();
        for workers in [1, 2, 4, 8] {
            let cfg = SchedulerConfig { n_workers: workers, latency: LatencyModel::default(), clock: Clock::Real };
            let run = run_parallel(&tree, &mesh, &assignment, &cfg).unwrap();
            runs += 1;
            if run.solution.bits() != seq.bits() {
                mismatches.push((workers, traders));
            }
        }
    }
    let (fast, elapsed) = within(start, 120);
    let ok = verdict(
        2,
        "determinism",
        mismatches.is_empty() && fast,
        &format!(
            "{runs} threaded runs on 8x8x8 p=2 ({} dofs), {} bitwise mismatches vs sequential, {:.1}s (budget 120s)",
            mesh.n_dofs,
            mismatches.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok, "mismatching (workers, traders): {mismatches:?}");
}

#[test]
fn ac3_scheduler_safety() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut violations, mut stalls, mut tasks) = (0usize, 0usize, 0usize);
    let mut notes = Vec::new();
    for round in 0..50 {
        let n = rng.gen_range(1..=200);
        let mut tree = PartitionTree::from_parents(&random_parents(&mut rng, n)).unwrap();
        for node in &mut tree.nodes {
            node.workload = rng.gen_range(1.0..1e4);
        }
        let back: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1e3)).collect();
        let condense_cost = tree.nodes.iter().map(|n| n.workload).collect();
        let workload = SyntheticWorkload { tree, condense_cost, back_cost: back };
        let traders = rng.gen_range(1..=6);
        let alpha = rng.gen_range(1.0..4.0);
        let assignment = partition_tasks(&workload.tree, traders, alpha).unwrap();
        let latency = if rng.gen_bool(0.5) {
            LatencyModel { constant: rng.gen_range(0.0..1e-5), per_byte: rng.gen_range(0.0..1e-9) }
        } else {
            LatencyModel::default()
        };
        let clock = if round % 5 == 0 { Clock::Real } else { Clock::simulated() };
        let cfg = SchedulerConfig { n_workers: rng.gen_range(1..=12), latency, clock };
        match run_protocol(&workload, &assignment, &cfg) {
            Ok(out) => {
                let (v, why) = schedule_violations(&workload.tree, &out.traces);
                violations += v;
                tasks += 2 * n;
                if v > 0 {
                    notes.push(format!("round {round}: {why:?}"));
                }
            }
            Err(e) => {
                stalls += 1;
                notes.push(format!("round {round}: {e}"));
            }
        }
    }
    let (fast, elapsed) = within(start, 30);
    let ok = verdict(
        3,
        "scheduler safety",
        violations == 0 && stalls == 0 && fast,
        &format!(
            "50 random trees, {tasks} tasks, {violations} dependency/exactly-once violations, {stalls} stalls, {:.1}s (budget 30s)",
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok, "{notes:?}");
}

#[test]
fn ac4_schur_properties() {
    const INVERSE_TOL: f64 = 1e-9;
    const TWO_STAGE_TOL: f64 = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_inv, mut worst_two, mut worst_asym) = (0.0f64, 0.0f64, 0.0f64);
    let mut not_spd = 0;
    for _ in 0..200 {
        let n = rng.gen_range(2..=20);
        let n_b = rng.gen_range(1..n);
        let n_i = n - n_b;
        let k = random_spd(&mut rng, n);
        let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (schur, _) = condense(&system(&k, &d, n_i)).unwrap();
        let s = to_na(&schur.s);
        worst_asym = worst_asym.max((&s - s.transpose()).amax());
        if nalgebra::Cholesky::new(s.clone()).is_none() {
            not_spd += 1;
        }
        let inv = k.clone().try_inverse().unwrap();
        let expected = inv.view((n_i, n_i), (n_b, n_b)).into_owned().try_inverse().unwrap();
        worst_inv = worst_inv.max(rel_diff(&s, &expected));

        if n_i >= 2 {
            let first = rng.gen_range(1..n_i);
            let (stage1, _) = condense(&system(&k, &d, first)).unwrap();
            let (stage2, _) = condense(&system(&to_na(&stage1.s), &stage1.g, n_i - first)).unwrap();
            let g_scale = schur.g.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
            let g_diff = stage2.g.iter().zip(&schur.g).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / g_scale;
            worst_two = worst_two.max(rel_diff(&to_na(&stage2.s), &s)).max(g_diff);
        }
    }
    let ok = verdict(
        4,
        "Schur properties",
        worst_asym == 0.0 && not_spd == 0 && worst_inv <= INVERSE_TOL && worst_two <= TWO_STAGE_TOL,
        &format!(
            "200 SPD systems n<=20: asymmetry {worst_asym:e}, {not_spd} not SPD, inverse identity {worst_inv:.2e} (tol {INVERSE_TOL:e}), two-stage {worst_two:.2e} (tol {TWO_STAGE_TOL:e})"
        ),
    );
    assert!(ok);
}

#[test]
fn ac5_incremental_resolve() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = Vec::new();
    let mut checks = 0;
    for (n, p) in [([4, 4, 4], 1), ([4, 3, 2], 2), ([6, 2, 2], 2), ([3, 3, 3], 3)] {
        let (mesh, _) = problem(n, p, ManufacturedCase::Trig);
        let tree = build_for_mesh(&mesh, 2.0).unwrap();
        let leaf_of = tree.leaf_of_element();
        let (_, base_records) = solve_sequential(&tree, &mesh).unwrap();
        for m in [1usize, 1, 2, 3, 5, 8] {
            let mut ids: Vec<usize> = mesh.elements.iter().map(|e| e.id).collect();
            let mut chosen = Vec::new();
            for _ in 0..m.min(ids.len()) {
                chosen.push(ids.swap_remove(rng.gen_range(0..ids.len())));
            }
            let mods: Vec<(usize, f64)> = chosen.iter().map(|&id| (id, rng.gen_range(0.5..4.0))).collect();
            let expected: BTreeSet<usize> = chosen.iter().flat_map(|id| ancestors_by_walk(&tree, leaf_of[id])).collect();

            let mut modified = mesh.clone();
            let mut records = base_records.clone();
            let (resolved, count) = incremental_resolve(&tree, &mut modified, &mut records, &mods).unwrap();
            let (scratch, _) = solve_sequential(&tree, &modified).unwrap();
            checks += 1;
            if m == 1 {
                let d = tree.node(leaf_of[&chosen[0]]).depth;
                if count != d + 1 {
                    failures.push(format!("{n:?} p={p}: single element at depth {d} recomputed {count}"));
                }
            }
            if count != expected.len() {
                failures.push(format!("{n:?} p={p}: {m} elements recomputed {count}, expected {}", expected.len()));
            }
            if resolved.bits() != scratch.bits() {
                failures.push(format!("{n:?} p={p}: {m} elements not bitwise equal to a fresh solve"));
            }
        }
    }
    let (fast, elapsed) = within(start, 30);
    let ok = verdict(
        5,
        "incremental re-solve",
        failures.is_empty() && fast,
        &format!(
            "{checks} modifications, recompute counts equal root-path unions, bitwise equal to fresh solves, {} failures, {:.1}s (budget 30s)",
            failures.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok, "{failures:?}");
}

/// Irregular octree over a graded point cloud with leaf-dominated synthetic
/// node sizes: node work grows with the square root of the leaves below it.
fn synthetic_benchmark(n_leaves: usize, seed: u64) -> SyntheticWorkload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let boxes: Vec<(usize, Aabb)> = (0..n_leaves)
        .map(|i| {
            let c = [rng.gen::<f64>().powi(2), rng.gen::<f64>().powf(1.5), rng.gen::<f64>()];
            (i, Aabb { min: [c[0] - h, c[1] - h, c[2] - h], max: [c[0] + h, c[1] + h, c[2] + h] })
        })
        .collect();
    let tree = build_tree(&boxes, 2.0).unwrap();
    let mut leaves = vec![0usize; tree.len()];
    for v in tree.postorder() {
        let node = tree.node(v);
        leaves[v] = if node.is_leaf() { 1 } else { node.children.iter().map(|&c| leaves[c]).sum() };
    }
    // leaf sizes of a p = 4 hexahedron: 27 interior modes, 98 on the boundary
    let sizes: Vec<(usize, usize)> = leaves
        .iter()
        .map(|&m| {
            let s = (m as f64).powf(0.5 / 3.0);
            let jitter: f64 = rng.gen_range(0.75..1.25);
            (((27.0 * s * jitter).round() as usize).max(1), (98.0 * s).round() as usize)
        })
        .collect();
    SyntheticWorkload::from_sizes(tree, &sizes)
}

#[test]
fn ac6_load_balancing() {
    const MIN_OMEGA: f64 = 0.5;
    const MEAN_OMEGA: f64 = 0.75;
    let start = Instant::now();
    let workload = synthetic_benchmark(4171, 7);
    let n_leaves = workload.tree.leaves().count();
    let assignment = partition_tasks(&workload.tree, 8, 2.0).unwrap();
    let out = run_protocol(&workload, &assignment, &SchedulerConfig::simulated(16)).unwrap();
    let dynamic = report(&ReportInput {
        traces: &out.traces,
        tree: Some(&workload.tree),
        n_traders: 8,
        condense_window: out.windows.get(&Phase::Condense).copied(),
        full_window: None,
        sequential_time: None,
    })
    .unwrap();
    let baseline = run_static_levelcut(&workload, 16, LatencyModel::default(), 1e-9).unwrap();
    let fixed = report(&ReportInput {
        traces: &baseline.traces,
        tree: Some(&workload.tree),
        n_traders: 0,
        condense_window: baseline.windows.get(&Phase::Condense).copied(),
        full_window: None,
        sequential_time: None,
    })
    .unwrap();
    let d = &dynamic.condensation;
    let s = &fixed.condensation;
    let (fast, elapsed) = within(start, 120);
    let ok = n_leaves >= 4096
        && d.min >= MIN_OMEGA
        && d.mean >= MEAN_OMEGA
        && d.mean > s.mean
        && d.frac_above_0_9 < 1.0
        && fast;
    verdict(
        6,
        "load balancing (scaled)",
        ok,
        &format!(
            "{n_leaves} leaves, 16 workers/8 traders: min omega {:.3} (>= {MIN_OMEGA}), mean {:.3} (>= {MEAN_OMEGA}), frac_above_0.9 {:.3} (< 1); static level-cut mean {:.3}, min {:.3}; {:.1}s (budget 120s)",
            d.min, d.mean, d.frac_above_0_9, s.mean, s.min, elapsed.as_secs_f64()
        ),
    );
    println!("      omegas (descending): {:?}", d.omegas.iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>());
    assert!(ok);
}

#[test]
fn ac7_level_cut_formula() {
    let (level, profile) = level_cut_profile(4171, 8).unwrap();
    let ok = level == 4 && profile == [4096, 512, 64, 8, 1];
    verdict(7, "level-cut formula", ok, &format!("N=4171, b=8 gives L={level}, profile {profile:?}"));
    assert!(ok);
}

#[test]
fn ac8_p_convergence() {
    let mut errors = Vec::new();
    for p in 1..=3 {
        let (mesh, exact) = problem([4, 4, 4], p, ManufacturedCase::Trig);
        let tree = build_for_mesh(&mesh, 2.0).unwrap();
        let (u, _) = solve_sequential(&tree, &mesh).unwrap();
        errors.push(mesh.solution_error(&u.values, &exact, 6).unwrap());
    }
    let ok = errors.windows(2).all(|w| w[1] <= w[0]);
    verdict(
        8,
        "p-convergence",
        ok,
        &format!("4x4x4 trig, L2 error at Gauss points p=1,2,3: {:.3e}, {:.3e}, {:.3e}", errors[0], errors[1], errors[2]),
    );
    assert!(ok);
}
