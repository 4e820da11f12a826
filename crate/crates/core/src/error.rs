use thiserror::Error;

/// Errors shared across the emulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    DimensionMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("NaN is not a valid input")]
    NanInput,

    #[error("non-finite value in input matrix")]
    NonFiniteInput,

    #[error("modulus mismatch: expected {expected}, got {got}")]
    ModulusMismatch { expected: i64, got: i64 },

    #[error("accumulator overflow: {0}")]
    Overflow(String),

    #[error("modulus count {n} out of range for {scheme} (expected {min}..={max})")]
    ModulusCountOutOfRange {
        scheme: &'static str,
        n: usize,
        min: usize,
        max: usize,
    },

    #[error("residue {residue} out of range for modulus {modulus}")]
    ResidueOutOfRange { residue: i64, modulus: i64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
