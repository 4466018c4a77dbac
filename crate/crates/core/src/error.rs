use thiserror::Error;

/// Problems with a case document, before or after schema decoding.
#[derive(Debug, Error)]
pub enum CaseError {
    #[error("malformed case document at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid case: {0}")]
    Validation(String),
    #[error("bus {0} does not exist")]
    UnknownBus(usize),
}

impl From<serde_json::Error> for CaseError {
    fn from(err: serde_json::Error) -> Self {
        CaseError::Parse { line: err.line(), column: err.column(), message: err.to_string() }
    }
}

/// Numerical failures in the flow, cascade and identification layers.
#[derive(Debug, Error)]
pub enum SolveError {
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    Dimension { what: &'static str, got: usize, expected: usize },
    #[error(
        "reduced admittance block of the island with reference bus {reference_bus} is singular \
         (pivot {pivot:.3e})"
    )]
    SingularIsland { reference_bus: usize, pivot: f64 },
    #[error("cascade step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<SolveError>,
    },
    #[error(
        "Newton Jacobian is singular at iteration {iteration}; try a different initial guess or a \
         larger finite-difference step"
    )]
    SingularJacobian { iteration: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl SolveError {
    pub(crate) fn at_step(self, step: usize) -> Self {
        SolveError::Step { step, source: Box::new(self) }
    }
}
