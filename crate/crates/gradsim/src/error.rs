use std::path::PathBuf;

/// Crate-wide error type.
///
/// Undefined similarity values (zero-norm gradients, singular self-kernels,
/// vanishing column sums) are reported as dedicated variants carrying the
/// diagnostic the caller needs; nothing silently divides by zero.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("{context}: expected length {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("output coordinate {coord} out of range for {d} output(s)")]
    BadCoordinate { coord: usize, d: usize },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("training aborted: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("correlation kernel undefined: {which} gradient has zero norm")]
    ZeroNormGradient { which: &'static str },

    #[error("influence kernel undefined: source gradient has zero norm")]
    ZeroSourceGradient,

    #[error(
        "self-kernel effectively singular: smallest eigenvalue {min_eig:.3e} \
         against largest {max_eig:.3e}"
    )]
    SingularSelfKernel { min_eig: f64, max_eig: f64 },

    #[error("kernel matrix is {got:?} where {expected:?} was required")]
    WrongKernelKind {
        expected: crate::kernels::KernelKind,
        got: crate::kernels::KernelKind,
    },

    #[error("sample {index} has an undefined (zero-norm) gradient")]
    UndefinedSample { index: usize },

    #[error(
        "normalized kernel column for sample {target} undefined: column sums to {sum:.3e}"
    )]
    ZeroColumnSum { target: usize, sum: f64 },

    #[error(
        "uncertainty factor undefined for sample {index}: denominator {denom:.3e}"
    )]
    ZeroDenominator { index: usize, denom: f64 },

    #[error("Lipschitz estimate undefined: no gradient pair is separated by more than {min_sep:.1e}")]
    DegenerateLipschitz { min_sep: f64 },

    #[error("pair loss undefined: {which} input has a zero-norm gradient")]
    DegeneratePair { which: &'static str },

    #[error("batch criterion undefined: mean gradient of batch {batch} has zero norm")]
    DegenerateBatch { batch: usize },

    #[error("{path}: bad IDX data at byte {offset}: {message}")]
    Idx {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("parameter container {path}: {message}")]
    ParamFile { path: PathBuf, message: String },

    #[error("gradient bank file {path}: {message}")]
    BankFile { path: PathBuf, message: String },

    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
