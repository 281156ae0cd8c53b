use thiserror::Error;

use crate::ue::UeSolution;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("unknown node {node} ({context})")]
    UnknownNode { node: u64, context: String },

    #[error("no OD pairs")]
    NoOdPairs,

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("disconnected OD: no path from {origin} to {dest}")]
    DisconnectedOd { origin: u64, dest: u64 },

    #[error("no feasible EV path from {origin} to {dest}: no route passes a charging station")]
    NoFeasibleEvPath { origin: u64, dest: u64 },

    #[error("max iterations exceeded: {iterations} iterations, relative gap {gap:.3e}")]
    MaxIterations {
        iterations: usize,
        gap: f64,
        best: Box<UeSolution>,
    },

    #[error("NEP carries flow: path {path} has cost above its OD minimum but flow {flow:.3e}")]
    NepCarriesFlow { path: usize, flow: f64 },

    #[error("singular KKT Jacobian (reciprocal condition estimate {rcond:.3e})")]
    SingularJacobian { rcond: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("max QP iterations ({0}) reached")]
    MaxQpIterations(usize),

    #[error("unmapped FCS at node {0}")]
    UnmappedFcs(u64),

    #[error("conic solver failed: {0}")]
    ConeSolver(String),

    #[error("infeasible OPF: {0}")]
    InfeasibleOpf(String),

    #[error("coupled loop cycle cap reached after {cycles} cycles (last change in profit {last_delta:.3e})")]
    CoupledCycleCap {
        cycles: usize,
        last_delta: f64,
        last_prices: Vec<Vec<f64>>,
        last_lmps: Vec<Vec<f64>>,
    },

    #[error("competition cycle cap reached after {cycles} cycles (last max price change {last_change:.3e})")]
    CompetitionCycleCap {
        cycles: usize,
        last_change: f64,
        last_prices: Vec<f64>,
    },

    #[error("grid too large: {points} points exceeds cap {cap}")]
    GridTooLarge { points: usize, cap: usize },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Error {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }

    /// True for failures of a numerical routine, as opposed to malformed input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::MaxIterations { .. }
            | Error::NepCarriesFlow { .. }
            | Error::SingularJacobian { .. }
            | Error::MaxQpIterations(_)
            | Error::ConeSolver(_)
            | Error::InfeasibleOpf(_)
            | Error::CoupledCycleCap { .. }
            | Error::CompetitionCycleCap { .. } => true,
            Error::AtIteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
