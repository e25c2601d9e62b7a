use crate::{CaseArg, ClockArg, MeshArgs, Mode, ReportArgs, ResolveArgs, SolveArgs, TreeArgs};
use anyhow::{bail, ensure, Context, Result};
use dissect_core::mesh::{
    generate_mesh, manufactured_problem, ExactSolution, ManufacturedCase, Mesh, Point,
};
use dissect_core::metrics::{self, ReportInput};
use dissect_core::scheduler::{
    levelcut_owners, run_parallel, run_static_levelcut, solution_from_outputs, traces_from_csv,
    traces_to_csv, Clock, LatencyModel, NumericWorkload, Phase, SchedulerConfig, Time, WorkerTrace,
};
use dissect_core::solver::{
    dense_reference_solve, incremental_resolve, residual_norms, solve_sequential, RecordCache,
    Records, Solution,
};
use dissect_core::tree::{build_for_mesh, partition_tasks, PartitionTree};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

const DEFAULT_GRID: usize = 4;
const DEFAULT_DEGREE: usize = 2;
const SECONDS_PER_FLOP: f64 = 1e-9;

struct Problem {
    mesh: Mesh,
    exact: Option<ExactSolution>,
}

fn write(path: &Path, data: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, data).with_context(|| format!("writing {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn parse_extents(text: &str) -> Result<Point> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    ensure!(
        parts.len() == 3,
        "--extents expects \"Lx,Ly,Lz\", got {text:?}"
    );
    let mut out = [0.0; 3];
    for (o, s) in out.iter_mut().zip(parts) {
        *o = s
            .parse()
            .with_context(|| format!("--extents: bad number {s:?}"))?;
    }
    Ok(out)
}

/// Parses `id:factor,id:factor,...`; an empty string means no change.
pub fn parse_modifications(text: &str) -> Result<Vec<(usize, f64)>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|entry| {
            let (id, factor) = entry
                .split_once(':')
                .with_context(|| format!("--modify entry {entry:?} is not id:factor"))?;
            let id = id
                .trim()
                .parse()
                .with_context(|| format!("--modify: bad element id in {entry:?}"))?;
            let factor = factor
                .trim()
                .parse()
                .with_context(|| format!("--modify: bad factor in {entry:?}"))?;
            Ok((id, factor))
        })
        .collect()
}

fn load_problem(args: &MeshArgs) -> Result<Problem> {
    if let Some(path) = &args.mesh_file {
        let text = read_text(path)?;
        let mesh =
            Mesh::from_json(&text).with_context(|| format!("reading mesh {}", path.display()))?;
        log::info!(
            "loaded {} elements, {} dofs from {}",
            mesh.elements.len(),
            mesh.n_dofs,
            path.display()
        );
        return Ok(Problem { mesh, exact: None });
    }
    let extents = match &args.extents {
        Some(s) => parse_extents(s)?,
        None => [1.0; 3],
    };
    let n = |v: Option<usize>| v.unwrap_or(DEFAULT_GRID);
    let mut mesh = generate_mesh(
        n(args.nx),
        n(args.ny),
        n(args.nz),
        extents,
        args.p.unwrap_or(DEFAULT_DEGREE),
    )?;
    let case = match args.case.unwrap_or(CaseArg::Trig) {
        CaseArg::Trig => ManufacturedCase::Trig,
        CaseArg::Poly2 => ManufacturedCase::Poly2,
    };
    let exact = manufactured_problem(&mut mesh, case)?;
    log::info!(
        "generated {} elements, {} dofs",
        mesh.elements.len(),
        mesh.n_dofs
    );
    Ok(Problem {
        mesh,
        exact: Some(exact),
    })
}

fn load_tree(mesh: &Mesh, args: &TreeArgs) -> Result<PartitionTree> {
    let tree = build_for_mesh(mesh, args.aspect_threshold)?;
    log::info!("tree: {} nodes, depth {}", tree.len(), tree.depth);
    Ok(tree)
}

fn dump_tree(tree: &PartitionTree, args: &TreeArgs, owner: Option<&[usize]>) -> Result<()> {
    match &args.dump_tree {
        Some(path) => write(path, tree.dump_json(owner)),
        None => Ok(()),
    }
}

pub fn mesh(args: &MeshArgs, output: &Path) -> Result<()> {
    let problem = load_problem(args)?;
    write(output, problem.mesh.to_json())?;
    println!("elements {}", problem.mesh.elements.len());
    println!("n_dofs {}", problem.mesh.n_dofs);
    Ok(())
}

fn write_traces(traces: &[WorkerTrace], args: &SolveArgs) -> Result<()> {
    write(&args.trace, traces_to_csv(traces, Phase::Condense))?;
    if let Some(path) = &args.trace_backsub {
        write(path, traces_to_csv(traces, Phase::BackSubstitute))?;
    }
    Ok(())
}

fn print_run_summary(
    traces: &[WorkerTrace],
    tree: &PartitionTree,
    windows: &BTreeMap<Phase, (Time, Time)>,
    n_traders: usize,
) -> Result<()> {
    let full = match (
        windows.get(&Phase::Condense),
        windows.get(&Phase::BackSubstitute),
    ) {
        (Some(c), Some(b)) => Some((c.0.min(b.0), c.1.max(b.1))),
        _ => None,
    };
    let r = metrics::report(&ReportInput {
        traces,
        tree: Some(tree),
        n_traders,
        condense_window: windows.get(&Phase::Condense).copied(),
        full_window: full,
        sequential_time: None,
    })?;
    println!("condense_span {}", r.condensation.span);
    println!("mean_omega {}", r.condensation.mean);
    println!("min_omega {}", r.condensation.min);
    println!("speedup {}", r.speedup);
    Ok(())
}

pub fn solve(args: &SolveArgs) -> Result<()> {
    if let Some(seed) = args.seed {
        log::info!("seed {seed} ignored: the pipeline is deterministic");
    }
    let Problem { mesh, .. } = load_problem(&args.mesh)?;
    ensure!(mesh.n_dofs > 0, "mesh has no free degrees of freedom");
    let tree = load_tree(&mesh, &args.tree)?;
    println!("nodes {}", tree.len());
    let (solution, records): (Solution, Records) = match args.mode {
        Mode::Seq => {
            dump_tree(&tree, &args.tree, None)?;
            solve_sequential(&tree, &mesh)?
        }
        Mode::Par => {
            ensure!(
                args.workers >= 1,
                "--workers must be at least 1 in par mode"
            );
            let assignment = partition_tasks(&tree, args.traders, args.alpha)?;
            dump_tree(&tree, &args.tree, Some(&assignment.owner))?;
            let latency = LatencyModel::parse(&args.latency)?;
            let clock = match args.clock {
                ClockArg::Sim => Clock::Simulated {
                    seconds_per_flop: SECONDS_PER_FLOP,
                },
                ClockArg::Real => Clock::Real,
            };
            let config = SchedulerConfig {
                n_workers: args.workers,
                latency,
                clock,
            };
            let run = run_parallel(&tree, &mesh, &assignment, &config)?;
            println!("messages {}", run.stats.messages);
            print_run_summary(&run.traces, &tree, &run.windows, args.traders)?;
            write_traces(&run.traces, args)?;
            (run.solution, run.records)
        }
        Mode::StaticLevelcut => {
            ensure!(
                args.workers >= 1,
                "--workers must be at least 1 in static-levelcut mode"
            );
            let latency = LatencyModel::parse(&args.latency)?;
            if args.clock == ClockArg::Real {
                log::warn!("static-levelcut always runs in simulated time");
            }
            let plan = levelcut_owners(&tree, args.workers)?;
            dump_tree(&tree, &args.tree, Some(&plan.owner))?;
            let workload = NumericWorkload::new(&tree, &mesh);
            let out = run_static_levelcut(&workload, args.workers, latency, SECONDS_PER_FLOP)?;
            let solution = solution_from_outputs(&tree, &out.records, &out.outputs, mesh.n_dofs)?;
            print_run_summary(&out.traces, &tree, &out.windows, 0)?;
            write_traces(&out.traces, args)?;
            (solution, out.records)
        }
    };
    let cache = RecordCache {
        n_dofs: mesh.n_dofs,
        n_nodes: tree.len(),
        scalings: Vec::new(),
        records,
    };
    write(&args.records, cache.to_bytes())?;
    write(&args.output, solution.to_csv())?;
    println!("n_dofs {}", mesh.n_dofs);
    Ok(())
}

pub fn resolve(args: &ResolveArgs) -> Result<()> {
    let modifications = parse_modifications(args.modify.as_deref().unwrap_or(""))?;
    let Problem { mut mesh, .. } = load_problem(&args.mesh)?;
    let tree = load_tree(&mesh, &args.tree)?;
    dump_tree(&tree, &args.tree, None)?;
    let data =
        fs::read(&args.records).with_context(|| format!("reading {}", args.records.display()))?;
    let mut cache = RecordCache::from_bytes(&data)
        .with_context(|| format!("reading record cache {}", args.records.display()))?;
    if cache.n_dofs != mesh.n_dofs
        || cache.n_nodes != tree.len()
        || cache.records.len() != tree.len()
    {
        bail!(
            "record cache {} does not match the mesh ({} dofs, {} nodes, {} records; expected {} dofs, {} nodes)",
            args.records.display(),
            cache.n_dofs,
            cache.n_nodes,
            cache.records.len(),
            mesh.n_dofs,
            tree.len()
        );
    }
    for &(id, factor) in &cache.scalings {
        mesh.scale_element(id, factor)?;
    }
    let (solution, recomputed) =
        incremental_resolve(&tree, &mut mesh, &mut cache.records, &modifications)?;
    println!("recompute_count {recomputed}");
    if !modifications.is_empty() {
        cache.scalings.extend(&modifications);
        write(&args.records, cache.to_bytes())?;
    }
    if let Some(path) = &args.output {
        write(path, solution.to_csv())?;
    }
    Ok(())
}

fn rel_inf(a: &[f64], reference: &[f64]) -> f64 {
    let num = a
        .iter()
        .zip(reference)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let den = reference.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

pub fn verify(mesh_args: &MeshArgs, tree_args: &TreeArgs) -> Result<()> {
    let Problem { mesh, exact } = load_problem(mesh_args)?;
    ensure!(mesh.n_dofs > 0, "mesh has no free degrees of freedom");
    let tree = load_tree(&mesh, tree_args)?;
    dump_tree(&tree, tree_args, None)?;
    let (nd, _) = solve_sequential(&tree, &mesh)?;
    let dense = dense_reference_solve(&mesh)?;
    let (r, d) = residual_norms(&mesh, &nd);
    println!("n_dofs {}", mesh.n_dofs);
    println!("max_rel_error {:e}", rel_inf(&nd.values, &dense.values));
    println!("rel_residual {:e}", if d == 0.0 { r } else { r / d });
    if let Some(exact) = exact {
        let degree = mesh.elements.first().map_or(1, |e| e.degree);
        println!(
            "l2_error {:e}",
            mesh.solution_error(&nd.values, &exact, degree + 3)?
        );
    }
    Ok(())
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let n_workers = args.workers.unwrap_or(0);
    let text = read_text(&args.trace)?;
    let mut traces = traces_from_csv(&text, Phase::Condense, n_workers)
        .with_context(|| format!("reading trace {}", args.trace.display()))?;
    let mut full_window = None;
    if let Some(path) = &args.trace_backsub {
        let text = read_text(path)?;
        let back = traces_from_csv(&text, Phase::BackSubstitute, traces.len())
            .with_context(|| format!("reading trace {}", path.display()))?;
        traces.resize_with(back.len().max(traces.len()), || WorkerTrace {
            worker: 0,
            intervals: Vec::new(),
        });
        for (w, t) in traces.iter_mut().enumerate() {
            t.worker = w;
        }
        for b in back {
            traces[b.worker].intervals.extend(b.intervals);
        }
        for t in &mut traces {
            t.intervals.sort_by_key(|i| i.start);
        }
        full_window = Some(metrics::trace_window(&traces, None));
    }
    if let Some(w) = args.workers {
        ensure!(
            traces.len() <= w,
            "trace mentions worker {} but --workers is {w}",
            traces.len() - 1
        );
    }
    let r = metrics::report(&ReportInput {
        traces: &traces,
        tree: None,
        n_traders: args.traders,
        condense_window: None,
        full_window,
        sequential_time: args.sequential_time,
    })?;
    write(&args.metrics, r.omega_csv())?;
    write(&args.summary, r.summary_json())?;
    println!("mean_omega {}", r.condensation.mean);
    println!("frac_above_0.9 {}", r.condensation.frac_above_0_9);
    println!("speedup {}", r.speedup);
    println!("efficiency {}", r.efficiency);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modification_lists() {
        assert_eq!(parse_modifications("").unwrap(), vec![]);
        assert_eq!(
            parse_modifications("3:2.5, 7:0.5").unwrap(),
            vec![(3, 2.5), (7, 0.5)]
        );
        assert!(parse_modifications("3").is_err());
        assert!(parse_modifications("x:1").is_err());
        assert!(parse_modifications("1:y").is_err());
    }

    #[test]
    fn extents_need_three_numbers() {
        assert_eq!(parse_extents("1,2,0.5").unwrap(), [1.0, 2.0, 0.5]);
        assert!(parse_extents("1,2").is_err());
        assert!(parse_extents("1,a,2").is_err());
    }
}
