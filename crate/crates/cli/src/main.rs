//! `dissect`: generate meshes, solve them by nested dissection (sequentially,
//! through the trader protocol, or with the static level-cut baseline),
//! re-solve after element changes, verify against a dense solve, and
//! summarise scheduler traces.

mod commands;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(
    name = "dissect",
    version,
    about = "Nested-dissection p-FEM solver with a trader-based task scheduler"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the element matrices of a generated mesh as JSON.
    Mesh {
        #[command(flatten)]
        mesh: MeshArgs,
        #[arg(long, short, default_value = "mesh.json")]
        output: PathBuf,
    },
    /// Solve and write the solution, the record cache and (parallel modes) traces.
    Solve(SolveArgs),
    /// Re-solve from a record cache after scaling element stiffnesses.
    Resolve(ResolveArgs),
    /// Compare the nested-dissection solution with a dense factorisation.
    Verify {
        #[command(flatten)]
        mesh: MeshArgs,
        #[command(flatten)]
        tree: TreeArgs,
    },
    /// Working indices, speedup and efficiency from trace files.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct MeshArgs {
    /// Elements along x.
    #[arg(long)]
    nx: Option<usize>,
    /// Elements along y.
    #[arg(long)]
    ny: Option<usize>,
    /// Elements along z.
    #[arg(long)]
    nz: Option<usize>,
    /// Polynomial degree.
    #[arg(long, short)]
    p: Option<usize>,
    /// Domain size "Lx,Ly,Lz".
    #[arg(long)]
    extents: Option<String>,
    /// Manufactured solution providing the load.
    #[arg(long, value_enum)]
    case: Option<CaseArg>,
    /// Read element matrices from a mesh JSON file instead of generating them.
    #[arg(long, conflicts_with_all = ["nx", "ny", "nz", "p", "extents", "case"])]
    mesh_file: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum CaseArg {
    Trig,
    Poly2,
}

#[derive(Args, Debug, Clone)]
pub struct TreeArgs {
    /// Aspect ratio above which a box is halved along its longest axis only.
    #[arg(long, default_value_t = 2.0)]
    aspect_threshold: f64,
    /// Write the partition tree as JSON.
    #[arg(long)]
    dump_tree: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Seq,
    Par,
    StaticLevelcut,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockArg {
    Sim,
    Real,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[command(flatten)]
    tree: TreeArgs,
    #[arg(long, value_enum, default_value = "seq")]
    mode: Mode,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 1)]
    traders: usize,
    /// Trader partition imbalance bound.
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// Message latency "c0,c1" in seconds and seconds per byte.
    #[arg(long, default_value = "0,0")]
    latency: String,
    #[arg(long, value_enum, default_value = "sim")]
    clock: ClockArg,
    /// Accepted for compatibility; the pipeline is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    /// Solution CSV.
    #[arg(long, short, default_value = "solution.csv")]
    output: PathBuf,
    /// Record cache for `resolve`.
    #[arg(long, default_value = "records.bin")]
    records: PathBuf,
    /// Condensation trace CSV (par and static-levelcut modes).
    #[arg(long, default_value = "trace.csv")]
    trace: PathBuf,
    /// Back-substitution trace CSV.
    #[arg(long)]
    trace_backsub: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ResolveArgs {
    #[command(flatten)]
    mesh: MeshArgs,
    #[command(flatten)]
    tree: TreeArgs,
    /// Record cache written by `solve`; updated in place.
    #[arg(long, default_value = "records.bin")]
    records: PathBuf,
    /// Stiffness scalings "id:factor,id:factor,...".
    #[arg(long)]
    modify: Option<String>,
    /// Solution CSV.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Condensation trace CSV.
    #[arg(long, default_value = "trace.csv")]
    trace: PathBuf,
    /// Back-substitution trace CSV; adds full-solve indices.
    #[arg(long)]
    trace_backsub: Option<PathBuf>,
    /// Worker count, including workers absent from the trace.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 1)]
    traders: usize,
    /// Sequential reference time in trace units; defaults to total busy time.
    #[arg(long)]
    sequential_time: Option<f64>,
    /// Metrics CSV `worker_id,omega`.
    #[arg(long, default_value = "metrics.csv")]
    metrics: PathBuf,
    /// Summary JSON.
    #[arg(long, default_value = "summary.json")]
    summary: PathBuf,
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("DISSECT_LOG", "warn");
    env_logger::Builder::from_env(env)
        .format_target(false)
        .init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Mesh { mesh, output } => commands::mesh(&mesh, &output),
        Command::Solve(args) => commands::solve(&args),
        Command::Resolve(args) => commands::resolve(&args),
        Command::Verify { mesh, tree } => commands::verify(&mesh, &tree),
        Command::Report(args) => commands::report(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {line}");
            ExitCode::FAILURE
        }
    }
}
