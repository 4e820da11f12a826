//! Emulated double-precision GEMM over simulated INT8 and FP8_E4M3
//! matrix-multiply units, using residue arithmetic over pairwise-coprime
//! moduli with CRT reconstruction, plus the companion analytic performance
//! and workspace models.

pub mod cli;
pub mod emulate;
pub mod error;
pub mod lowprec;
pub mod matrix;
pub mod models;
pub mod moduli;
pub mod oracle;
pub mod quantize;
pub mod verify;

pub use error::{Error, Result};
pub use matrix::Matrix;

// Concrete element-type aliases for the generic container.
pub use lowprec::{Binary32Matrix, Binary64Matrix, Fp8Matrix, Int32Matrix, Int8Matrix};
pub type Int16Matrix = Matrix<i16>;

pub use emulate::{gemm_blocked, gemm_emulated, EmulationConfig, EmulationResult, Mode};
pub use moduli::{build_moduli, crt_constants, effective_bits, ModuliSet, Scheme};
