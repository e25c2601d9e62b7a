mod common;

use common::*;
use dissect_core::mesh::{generate_mesh, Aabb, ManufacturedCase};
use dissect_core::metrics::{report, ReportInput};
use dissect_core::scheduler::{build_task_graph, run_parallel, LatencyModel, Phase, SchedulerConfig};
use dissect_core::solver::solve_sequential;
use dissect_core::tree::{build_for_mesh, build_tree, partition_tasks, TraderAssignment};

#[test]
fn halving_h_at_p2_reduces_l2_error_fourfold() {
    let mut errors = Vec::new();
    for n in [2usize, 4, 8] {
        let (mesh, exact) = problem([n; 3], 2, ManufacturedCase::Trig);
        let tree = build_for_mesh(&mesh, 2.0).unwrap();
        let (u, _) = solve_sequential(&tree, &mesh).unwrap();
        errors.push(mesh.solution_error(&u.values, &exact, 5).unwrap());
    }
    for w in errors.windows(2) {
        assert!(w[0] / w[1] >= 4.0, "errors {errors:?}");
    }
}

#[test]
fn benchmark_sized_tree_starts_with_one_ready_task_per_element() {
    // 43 × 97 = 4171 elements
    let mesh = generate_mesh(43, 97, 1, [43.0, 97.0, 1.0], 1).unwrap();
    let boxes: Vec<(usize, Aabb)> = mesh.elements.iter().map(|e| (e.id, e.bbox())).collect();
    let tree = build_tree(&boxes, 2.0).unwrap();
    assert_eq!(tree.leaves().count(), 4171);
    for traders in [1, 8] {
        let assignment = partition_tasks(&tree, traders, 2.0).unwrap();
        let queues = build_task_graph(&tree, &assignment, Phase::Condense);
        let ready: usize = queues.iter().map(|q| q.n_ready()).sum();
        assert_eq!(ready, 4171);
    }
}

fn single_worker_speedup(latency: LatencyModel) -> f64 {
    let (mesh, _) = problem([4, 4, 4], 2, ManufacturedCase::Trig);
    let tree = build_for_mesh(&mesh, 2.0).unwrap();
    let assignment = TraderAssignment::single(&tree);
    let config = SchedulerConfig { latency, ..SchedulerConfig::simulated(1) };
    let run = run_parallel(&tree, &mesh, &assignment, &config).unwrap();
    let c = run.windows[&Phase::Condense];
    let b = run.windows[&Phase::BackSubstitute];
    let r = report(&ReportInput {
        traces: &run.traces,
        tree: Some(&tree),
        n_traders: 1,
        condense_window: Some(c),
        full_window: Some((c.0, b.1)),
        sequential_time: None,
    })
    .unwrap();
    r.speedup
}

#[test]
fn single_worker_speedup_is_protocol_overhead_only() {
    let in_process = single_worker_speedup(LatencyModel::default());
    assert!((0.9..=1.0).contains(&in_process), "speedup {in_process}");
    // tasks here are microseconds long, so microsecond messages dominate
    let remote = single_worker_speedup(LatencyModel { constant: 1e-6, per_byte: 1e-10 });
    assert!(remote < in_process, "latency {remote} vs in-process {in_process}");
}
