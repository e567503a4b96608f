use thiserror::Error;

use crate::linalg::Matrix;
use crate::model::Queue;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{field} out of [0,1]: {value}")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("{field} out of [0,1): {value}")]
    ArrivalOutOfRange { field: &'static str, value: f64 },
    #[error("non-coding mode needs {field} equal to q ({value} != {q})")]
    NonNcInconsistent { field: &'static str, value: f64, q: f64 },
    #[error("transition coefficients are only defined in network-coding mode")]
    UnsupportedMode,
    #[error("invalid state: {coordinate} = {value}")]
    InvalidState { coordinate: &'static str, value: i64 },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Error)]
pub enum QbdError {
    #[error("malformed blocks: {0}")]
    MalformedBlocks(&'static str),
    #[error("I - A1 is singular")]
    Degenerate,
    #[error("chain is unstable (spectral radius of R = {spectral_radius})")]
    Unstable { spectral_radius: f64, last: Matrix },
    #[error("rate matrix did not converge in {iterations} iterations (last change {last_change})")]
    NotConverged { iterations: usize, last_change: f64 },
    #[error("linear progression iterate decreased by {0}")]
    NonMonotone(f64),
}

#[derive(Debug, Clone, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Qbd(#[from] QbdError),
    #[error("invalid chain spec: {0}")]
    InvalidSpec(&'static str),
    #[error("relay saturated: chain of {0} is unstable")]
    SaturatedRelay(Queue),
    #[error("unstable queues: {0:?}")]
    UnstableQueues(alloc::vec::Vec<Queue>),
    #[error("throughput is zero while the relay holds packets; delay undefined")]
    UndefinedDelay,
    #[error("the relay saturates before the end nodes at lam1 = {lam1}; lower g1, g2 or raise q, q1, q2")]
    RelaySaturatesFirst { lam1: f64 },
}

#[derive(Debug, Clone, Error)]
pub enum OracleError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("cap must be at least 1, got {0}")]
    CapTooSmall(usize),
    #[error("truncated chain needs ~{needed} bytes, budget is {budget}; use a smaller cap")]
    TooLarge { needed: usize, budget: usize },
    #[error("chain is reducible: state {state} cannot reach the empty state")]
    Reducible { state: usize },
}
