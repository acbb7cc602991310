use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("node {node} has no outgoing edges")]
    IsolatedNode { node: usize },

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("variance profile is not node-transitive (row sums span {min} .. {max})")]
    NodeTransitivityViolation { min: f64, max: f64 },

    #[error("fixed point did not converge in {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("density integration failed: {invalid} of {total} cells invalid")]
    DensityFailure { invalid: usize, total: usize },

    #[error("target grid is not covered by the source density: {0}")]
    Coverage(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("left Perron vector: {0}")]
    PerronFailure(String),

    #[error("{failed} of {trials} Monte-Carlo trials failed")]
    McFailure { failed: usize, trials: usize },

    #[error("filtering region is empty (kappa={kappa:e}, tau={tau:e})")]
    EmptyRegion { kappa: f64, tau: f64 },

    #[error("mean-spectrum filter of degree {degree} needs more than {distinct} distinct mean eigenvalues")]
    InfeasibleBaseline { degree: usize, distinct: usize },

    #[error("minimax solver failed: {reason}")]
    SolverFailure { reason: String, best: Vec<f64> },

    #[error("rate undefined: {0}")]
    RateUndefined(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
