use thiserror::Error;

/// Errors produced by the solver pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate element: non-positive Jacobian {det:e} at quadrature point {point}")]
    DegenerateElement { point: usize, det: f64 },

    #[error("elements {first} and {second} share the same centroid and cannot be separated")]
    NonSeparable { first: usize, second: usize },

    #[error("tree/mesh inconsistency: {0}")]
    Inconsistency(String),

    #[error("assembly scope violation: dof {dof} is not owned by node {node}")]
    AssemblyScope { dof: usize, node: usize },

    #[error("singular system: non-positive pivot {pivot:e}{}", at_dof(.dof))]
    SingularSystem { dof: Option<usize>, pivot: f64 },

    #[error("incomplete solution: no value for interface dof {dof}")]
    IncompleteSolution { dof: usize },

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("scheduler stall: {pending} tasks incomplete with all workers idle and no messages in flight")]
    SchedulerStall { pending: usize },

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

fn at_dof(dof: &Option<usize>) -> String {
    dof.map(|d| format!(" at dof {d}")).unwrap_or_default()
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
