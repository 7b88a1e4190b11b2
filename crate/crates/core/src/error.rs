use thiserror::Error;

/// Errors raised anywhere in the engine.
///
/// [`Error::is_config_error`] separates user-input problems from numerical
/// breakdowns; the CLI maps them to different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("occupancy violation: {0}")]
    OccupancyViolation(String),
    #[error("capacity exceeded: {what} needs {required}, cap is {cap}")]
    CapacityExceeded {
        what: &'static str,
        required: u128,
        cap: u128,
    },
    #[error("malformed FCIDUMP header: {0}")]
    MalformedHeader(String),
    #[error("malformed FCIDUMP record on line {line}: {msg}")]
    MalformedRecord { line: usize, msg: String },
    #[error("integral index out of range on line {line}: {index} > {n_orb}")]
    IndexOutOfRange {
        line: usize,
        index: usize,
        n_orb: usize,
    },
    #[error("inconsistent duplicate integral {indices:?}: {first} vs {second}")]
    DuplicateInconsistentEntry {
        indices: [usize; 4],
        first: f64,
        second: f64,
    },
    #[error("invalid ansatz configuration: {0}")]
    InvalidAnsatz(String),
    #[error("wavefunction amplitude is exactly zero for {0}")]
    ZeroAmplitude(String),
    #[error("no hopping move exists in this spin sector")]
    FrozenSector,
    #[error("could not draw a configuration with nonzero amplitude after {0} attempts")]
    InitializationFailure(usize),
    #[error("least-squares solve failed: {0}")]
    SolverFailure(String),
    #[error("eigensolver did not converge: {0}")]
    ConvergenceFailure(String),
    #[error("all abscissae are equal; slope is undefined")]
    DegenerateAbscissa,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::MalformedHeader(_)
                | Error::MalformedRecord { .. }
                | Error::IndexOutOfRange { .. }
                | Error::DuplicateInconsistentEntry { .. }
                | Error::InvalidAnsatz(_)
                | Error::Checkpoint(_)
                | Error::CapacityExceeded { .. }
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
