use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parameter component {index} = {value} lies outside [{lower}, {upper}]")]
    ParameterOutOfBounds {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
    #[error("maximum number of steps exceeded at t = {t}")]
    MaxStepsExceeded { t: f64 },
    #[error("algebraic Newton solve failed at t = {t} (residual {residual:e}); possible degeneracy")]
    NewtonFailure { t: f64, residual: f64 },
    #[error("trajectory ends at t = {reached} but the objective needs t = {expected}")]
    TruncatedTrajectory { reached: f64, expected: f64 },
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),
    #[error("need at least {required} samples, found {found}")]
    InsufficientSamples { required: usize, found: usize },
    #[error("reference solve failed for p = {p:?}: {source}")]
    ReferenceSolve {
        p: alloc::vec::Vec<f64>,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

impl Error {
    pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { what, expected, found })
        }
    }
}
