use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("qubit {qubit} out of range for a {num_qubits}-qubit register")]
    QubitOutOfRange { qubit: usize, num_qubits: usize },
    #[error("duplicate gate target {0}")]
    DuplicateTarget(usize),
    #[error("length mismatch: expected {expected}, got {actual} ({what})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid channel rate {0}, must lie in [0, 1]")]
    InvalidRate(f64),
    #[error("input value {value} at index {index} outside [{min}, {max}]")]
    InputRange {
        index: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("gate for parameter {0} is not generated by a Pauli string")]
    NotPauliGenerated(usize),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("density-matrix simulation limited to {max} qubits, got {requested}")]
    TooManyQubits { requested: usize, max: usize },
    #[error("backward pass called without a matching forward cache")]
    StaleCache,
}
