//! Bit-exact FP8_E4M3 codec with directed rounding and software-simulated
//! low-precision GEMM kernels (FP8 inputs with FP32 accumulation, INT8
//! inputs with wide integer accumulation).

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// One byte holding an FP8_E4M3 value: sign(1) / exponent(4, bias 7) / mantissa(3).
///
/// The format has no infinities; exponent 15 with mantissa 111 is NaN.
/// The largest finite magnitude is 448. Every integer of magnitude <= 16 is
/// exactly representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fp8Code(pub u8);

pub const FP8_MAX: f64 = 448.0;

impl Fp8Code {
    pub const NAN: Fp8Code = Fp8Code(0x7F);

    #[inline]
    pub fn is_nan(self) -> bool {
        self.0 & 0x7F == 0x7F
    }
}

/// IEEE-style rounding direction for the FP8 encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundingMode {
    NearestEven,
    TowardPositive,
    TowardNegative,
    TowardZero,
}

pub type Fp8Matrix = Matrix<Fp8Code>;
pub type Int8Matrix = Matrix<i8>;
pub type Int32Matrix = Matrix<i32>;
pub type Binary32Matrix = Matrix<f32>;
pub type Binary64Matrix = Matrix<f64>;

/// Exact real value of an FP8_E4M3 code; NaN codes map to f64 NaN.
pub fn fp8_decode(c: Fp8Code) -> f64 {
    let b = c.0;
    let sign = if b & 0x80 != 0 { -1.0 } else { 1.0 };
    let exp = (b >> 3) & 0x0F;
    let mant = (b & 0x07) as f64;
    if exp == 15 && b & 0x07 == 0x07 {
        return f64::NAN;
    }
    if exp == 0 {
        // subnormal: mantissa * 2^-9
        sign * mant * (2.0f64).powi(-9)
    } else {
        sign * (1.0 + mant / 8.0) * (2.0f64).powi(exp as i32 - 7)
    }
}

/// Sorted table of the 127 nonnegative finite values (codes 0x00..=0x7E).
/// Decode is monotone over this code range, so code == index.
fn nonneg_table() -> &'static [f64; 127] {
    static TABLE: OnceLock<[f64; 127]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0f64; 127];
        for (i, v) in t.iter_mut().enumerate() {
            *v = fp8_decode(Fp8Code(i as u8));
        }
        t
    })
}

/// Encode a finite binary64 value into FP8_E4M3 under the given rounding mode.
///
/// Magnitudes beyond 448 saturate to the max-magnitude finite value, except
/// that a directed mode pointing inward (e.g. toward-positive on a negative
/// overflow) also lands on +-448, the closest representable value in that
/// direction.
pub fn fp8_encode(x: f64, mode: RoundingMode) -> Result<Fp8Code> {
    if x.is_nan() {
        return Err(Error::NanInput);
    }
    let neg = x.is_sign_negative();
    let a = x.abs();
    let table = nonneg_table();

    // Largest index with table[idx] <= a.
    let idx = match table.binary_search_by(|v| v.partial_cmp(&a).unwrap()) {
        Ok(i) => return Ok(compose(i as u8, neg)),
        Err(ins) => ins - 1, // ins >= 1 since table[0] == 0.0 <= a
    };

    if idx == 126 {
        // beyond the top finite value: saturate in every mode
        return Ok(compose(126, neg));
    }
    let lo = table[idx];
    let hi = table[idx + 1];

    // Direction on the magnitude axis.
    let mag_up = match mode {
        RoundingMode::TowardZero => false,
        RoundingMode::TowardPositive => !neg,
        RoundingMode::TowardNegative => neg,
        RoundingMode::NearestEven => {
            let dl = a - lo;
            let dh = hi - a;
            if dl != dh {
                dl > dh
            } else {
                // tie: pick the code with even mantissa (low bit clear)
                idx & 1 == 1
            }
        }
    };
    let code = if mag_up { idx + 1 } else { idx } as u8;
    Ok(compose(code, neg))
}

#[inline]
fn compose(code: u8, neg: bool) -> Fp8Code {
    Fp8Code(if neg { code | 0x80 } else { code })
}

/// Encodes an integer digit with |d| <= 16; always exact.
pub fn fp8_encode_digit(d: i32) -> Fp8Code {
    debug_assert!(d.unsigned_abs() <= 16);
    fp8_encode(d as f64, RoundingMode::NearestEven).expect("digit is finite")
}

pub const FP8_GEMM_MAX_K: usize = 1 << 16;
pub const INT8_GEMM_MAX_K: usize = 1 << 17;

/// Simulated FP8 MMA: decoded products accumulated sequentially (h = 1..k)
/// in binary32 round-to-nearest-even.
///
/// When every input is an integer of magnitude <= 16 and k <= 2^16, each
/// accumulation stays within the 24-bit significand of binary32, so the
/// result is the exact integer dot product.
pub fn fp8_gemm(a: &Fp8Matrix, b: &Fp8Matrix) -> Result<Binary32Matrix> {
    let k = a.check_matmul(b)?;
    if k > FP8_GEMM_MAX_K {
        return Err(Error::InvalidArgument(format!(
            "fp8_gemm requires k <= 2^16, got {k}"
        )));
    }
    if a.entries().iter().chain(b.entries()).any(|c| c.is_nan()) {
        return Err(Error::NanInput);
    }
    let (m, n) = (a.rows(), b.cols());
    let ad: Vec<f32> = a.entries().iter().map(|&c| fp8_decode(c) as f32).collect();
    let bd: Vec<f32> = b.entries().iter().map(|&c| fp8_decode(c) as f32).collect();
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let mut acc = 0.0f32;
            for (h, &av) in arow.iter().enumerate() {
                acc += av * bd[h * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Ok(Matrix::from_vec(m, n, out))
}

/// Simulated INT8 MMA: exact integer dot products.
///
/// Accumulates in 64-bit and asserts the signed 32-bit hardware contract
/// afterward, so a precondition violation surfaces as an error instead of
/// wrapping.
pub fn int8_gemm(a: &Int8Matrix, b: &Int8Matrix) -> Result<Int32Matrix> {
    let k = a.check_matmul(b)?;
    if k > INT8_GEMM_MAX_K {
        return Err(Error::InvalidArgument(format!(
            "int8_gemm requires k <= 2^17, got {k}"
        )));
    }
    let (m, n) = (a.rows(), b.cols());
    let mut out = vec![0i32; m * n];
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            let mut acc = 0i64;
            for (h, &av) in arow.iter().enumerate() {
                acc += av as i64 * *b.get(h, j) as i64;
            }
            out[i * n + j] = i32::try_from(acc).map_err(|_| {
                Error::Overflow(format!("int8_gemm accumulator {acc} exceeds INT32"))
            })?;
        }
    }
    Ok(Matrix::from_vec(m, n, out))
}
