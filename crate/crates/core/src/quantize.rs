//! Conversion of binary64 matrices into scaled integral matrices, modular
//! residues, and FP8 digit matrices, plus the fast- and accurate-mode
//! scaling-vector computations.

use num_bigint::BigInt;
use num_traits::One;

use crate::error::{Error, Result};
use crate::lowprec::{
    fp8_encode, int8_gemm, Binary32Matrix, Binary64Matrix, Fp8Matrix, Int8Matrix, RoundingMode,
};
use crate::matrix::Matrix;
use crate::moduli::{log2_big, ModuliSet, Scheme};

/// Per-row or per-column power-of-two scaling, stored as signed base-2
/// exponents (the paper keeps these in INT16).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PowerOfTwoVector {
    pub exponents: Vec<i16>,
}

impl PowerOfTwoVector {
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }
}

/// Which side of the product a scaling vector applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Matrix whose binary64 entries are guaranteed integer-valued.
pub type IntegralMatrix = Matrix<f64>;

/// Residues of an integral matrix under one modulus, in the symmetric range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidueMatrix {
    pub modulus: i64,
    pub entries: Matrix<i16>,
}

/// FP8-coded digit factors of a residue matrix: radix * D1 + D2 reconstructs
/// the residue; non-square moduli also carry D3 = D1 + D2 for the Karatsuba
/// reconstruction.
#[derive(Debug, Clone)]
pub struct DigitMatrices {
    pub modulus: i64,
    pub radix: i64,
    pub d1: Fp8Matrix,
    pub d2: Fp8Matrix,
    pub d3: Option<Fp8Matrix>,
}

/// floor(log2(|x|)) from the exponent field; exact for all finite nonzero x.
pub fn floor_log2(x: f64) -> Result<i32> {
    if x == 0.0 || !x.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "floor_log2 requires a finite nonzero value, got {x}"
        )));
    }
    let bits = x.to_bits();
    let exp_field = ((bits >> 52) & 0x7FF) as i32;
    if exp_field != 0 {
        Ok(exp_field - 1023)
    } else {
        let mant = bits & ((1u64 << 52) - 1);
        Ok(63 - mant.leading_zeros() as i32 - 1074)
    }
}

/// Unit in the first place: 2^floor(log2(|x|)).
pub fn ufp(x: f64) -> Result<f64> {
    Ok(exp2i(floor_log2(x)?))
}

/// 2^e as binary64; e must stay within the representable range.
pub fn exp2i(e: i32) -> f64 {
    assert!((-1074..=1023).contains(&e));
    if e >= -1022 {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else {
        f64::from_bits(1u64 << (e + 1074))
    }
}

/// x * 2^e with the wide exponent range handled by splitting the shift.
pub fn ldexp(x: f64, e: i32) -> f64 {
    if x == 0.0 {
        return x;
    }
    if (-969..=969).contains(&e) {
        return x * exp2i(e);
    }
    let half = e / 2;
    x * exp2i(half.clamp(-1074, 1023)) * exp2i((e - half).clamp(-1074, 1023))
}

/// Symmetric residue: congruent to x mod p, reduced to [0, p) and shifted
/// down by p when >= ceil(p/2) (even p: >= p/2).
pub fn symmetric_mod(x: i64, p: i64) -> i64 {
    debug_assert!(p >= 2);
    let mut r = x.rem_euclid(p);
    if r >= (p + 1) / 2 {
        r -= p;
    }
    r
}

/// 2^e mod p by square-and-multiply.
pub fn pow2mod(mut e: u64, p: i64) -> i64 {
    let p = p as u128;
    let mut base = 2u128 % p;
    let mut acc = 1u128;
    while e > 0 {
        if e & 1 == 1 {
            acc = acc * base % p;
        }
        base = base * base % p;
        e >>= 1;
    }
    acc as i64
}

/// Exact symmetric residue of an integer-valued binary64, including values
/// far beyond the 64-bit range: decompose v = m * 2^e with m a signed
/// <=53-bit integer and reduce via modular exponentiation.
pub fn residue_of_integral(v: f64, p: i64) -> i64 {
    if v == 0.0 {
        return 0;
    }
    debug_assert!(v.trunc() == v, "residue_of_integral requires integral input");
    let bits = v.abs().to_bits();
    let exp_field = ((bits >> 52) & 0x7FF) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    let (mut mant, mut exp) = if exp_field == 0 {
        (frac, -1074i32)
    } else {
        (frac | (1u64 << 52), exp_field - 1075)
    };
    if exp < 0 {
        // integral, so the mantissa carries the fractional shift
        mant >>= (-exp) as u32;
        exp = 0;
    }
    let sign = if v < 0.0 { -1 } else { 1 };
    let m = sign * (mant % p as u64) as i64;
    symmetric_mod(m * pow2mod(exp as u64, p), p)
}

/// Narrow a binary64 value to binary32 rounding toward +infinity.
pub fn f32_round_up(x: f64) -> f32 {
    let r = x as f32;
    if (r as f64) < x {
        r.next_up()
    } else {
        r
    }
}

/// Narrow a binary64 value to binary32 rounding toward -infinity.
pub fn f32_round_down(x: f64) -> f32 {
    let r = x as f32;
    if (r as f64) > x {
        r.next_down()
    } else {
        r
    }
}

fn axis_lanes(m: &Binary64Matrix, axis: Axis) -> (usize, usize) {
    match axis {
        Axis::Rows => (m.rows(), m.cols()),
        Axis::Cols => (m.cols(), m.rows()),
    }
}

#[inline]
fn lane_entry(m: &Binary64Matrix, axis: Axis, lane: usize, h: usize) -> f64 {
    match axis {
        Axis::Rows => *m.get(lane, h),
        Axis::Cols => *m.get(h, lane),
    }
}

/// log2 with an exact power-of-two shift: doubling the input changes the
/// result by exactly 1.
fn log2_stable(x: f64) -> f64 {
    let q = floor_log2(x).expect("positive finite") + 1;
    let mant = ldexp(x, -q); // in [0.5, 1)
    q as f64 + mant.log2()
}

/// Fast-mode scaling: per lane, the largest power of two 2^e with
/// 2^e * n_lane <= sqrt((P-1)/2), where n_lane is a certified upper bound on
/// the lane's 2-norm. When both sides use this rule the exact products stay
/// strictly inside (-P/2, P/2].
pub fn fast_scaling(m: &Binary64Matrix, axis: Axis, p_product: &BigInt) -> PowerOfTwoVector {
    // conservative lower bound on log2(sqrt((P-1)/2))
    let half_log = (log2_big(&(p_product - BigInt::one())) - 1e-9 - 1.0) / 2.0;
    let (lanes, k) = axis_lanes(m, axis);
    let norm_inflation = 1.0 + exp2i(-30);
    let mut exponents = Vec::with_capacity(lanes);
    for lane in 0..lanes {
        let mut sq = 0.0f64;
        for h in 0..k {
            let v = lane_entry(m, axis, lane, h);
            sq += v * v;
        }
        if sq == 0.0 {
            exponents.push(0);
            continue;
        }
        let norm = sq.sqrt() * norm_inflation;
        let e = (half_log - log2_stable(norm)).floor();
        exponents.push(e as i16);
    }
    PowerOfTwoVector { exponents }
}

/// Smallest positive binary64, used to keep upward-rounded bounds nonzero
/// when the power-of-two scaling underflows.
const TINY: f64 = f64::MIN_POSITIVE;

/// Accurate-mode prescaling for the FP8 path: mu'_lane = 2^7 / ufp(max |entry|)
/// and the magnitude matrix |diag(mu') M| encoded upward, so the later FP8
/// product upper-bounds the scaled row/column sums.
pub fn accurate_prescale(m: &Binary64Matrix, axis: Axis) -> (PowerOfTwoVector, Fp8Matrix) {
    let (lanes, k) = axis_lanes(m, axis);
    let mut exponents = Vec::with_capacity(lanes);
    for lane in 0..lanes {
        let mx = (0..k)
            .map(|h| lane_entry(m, axis, lane, h).abs())
            .fold(0.0f64, f64::max);
        if mx == 0.0 {
            exponents.push(0);
        } else {
            exponents.push((7 - floor_log2(mx).expect("finite nonzero")) as i16);
        }
    }
    let enc = |i: usize, j: usize| {
        let lane = match axis {
            Axis::Rows => i,
            Axis::Cols => j,
        };
        let v = m.get(i, j).abs();
        let mut scaled = ldexp(v, exponents[lane] as i32);
        if v != 0.0 && scaled == 0.0 {
            scaled = TINY;
        }
        fp8_encode(scaled, RoundingMode::TowardPositive).expect("finite")
    };
    let mat = Fp8Matrix::from_fn(m.rows(), m.cols(), enc);
    (PowerOfTwoVector { exponents }, mat)
}

/// Accurate-mode prescaling for the INT8 path: mu'_lane = 2^6 / ufp(max) and
/// entries ceil(|scaled|) clamped to 127. The clamp (128 -> 127) is repaid by
/// the (128/127)^2 factor in [`bound_matrix_int8`].
pub fn accurate_prescale_int8(m: &Binary64Matrix, axis: Axis) -> (PowerOfTwoVector, Int8Matrix) {
    let (lanes, k) = axis_lanes(m, axis);
    let mut exponents = Vec::with_capacity(lanes);
    for lane in 0..lanes {
        let mx = (0..k)
            .map(|h| lane_entry(m, axis, lane, h).abs())
            .fold(0.0f64, f64::max);
        if mx == 0.0 {
            exponents.push(0);
        } else {
            exponents.push((6 - floor_log2(mx).expect("finite nonzero")) as i16);
        }
    }
    let enc = |i: usize, j: usize| {
        let lane = match axis {
            Axis::Rows => i,
            Axis::Cols => j,
        };
        let v = m.get(i, j).abs();
        let mut scaled = ldexp(v, exponents[lane] as i32);
        if v != 0.0 && scaled == 0.0 {
            scaled = TINY;
        }
        (scaled.ceil() as i64).min(127) as i8
    };
    let mat = Int8Matrix::from_fn(m.rows(), m.cols(), enc);
    (PowerOfTwoVector { exponents }, mat)
}

/// Upper bound on the true product of the prescaled FP8 magnitude matrices:
/// the FP8 product inflated by (1 + (k+1) 2^-24) with an upward-rounded
/// binary32 multiply per entry.
pub fn bound_matrix(a_bar: &Fp8Matrix, b_bar: &Fp8Matrix, k: usize) -> Result<Binary32Matrix> {
    if k > crate::lowprec::FP8_GEMM_MAX_K {
        return Err(Error::InvalidArgument(format!(
            "bound_matrix requires k <= 2^16, got {k}"
        )));
    }
    let raw = crate::lowprec::fp8_gemm(a_bar, b_bar)?;
    let factor = 1.0 + (k as f64 + 1.0) * exp2i(-24);
    Ok(raw.map(|&c| f32_round_up(factor * c as f64)))
}

/// INT8 analogue of [`bound_matrix`]: the integer product is exact, and the
/// (128/127)^2 factor covers the clamped ceil in the prescale step.
pub fn bound_matrix_int8(a_int: &Int8Matrix, b_int: &Int8Matrix) -> Result<Binary32Matrix> {
    let raw = int8_gemm(a_int, b_int)?;
    let factor = (128.0 / 127.0) * (128.0 / 127.0);
    Ok(raw.map(|&c| f32_round_up(factor * c as f64)))
}

/// Round-down binary32 value of (log2(P-1) - 1) / 2.
pub fn p_prime(p_product: &BigInt) -> f32 {
    f32_round_down((log2_big(&(p_product - BigInt::one())) - 1e-9 - 1.0) / 2.0)
}

/// Round-down binary32 value of -1/(2 - 2^-21); absorbs the rounding error
/// of the binary32 log2 evaluation.
pub fn delta() -> f32 {
    f32_round_down(-1.0 / (2.0 - exp2i(-21)))
}

/// int(P' + delta * log2(max_c)), every step narrowed downward to binary32,
/// int = truncation toward zero.
pub fn scaling_offset(p_prime: f32, max_c: f32) -> i32 {
    debug_assert!(max_c > 0.0);
    let t = f32_round_down((max_c as f64).log2());
    let prod = f32_round_down(delta() as f64 * t as f64);
    let sum = f32_round_down(p_prime as f64 + prod as f64);
    sum.trunc() as i32
}

/// Accurate-mode scaling: per lane, e(mu) = e(mu') + int(P' + delta * log2(max c)),
/// with all-zero lanes pinned to exponent 0.
pub fn accurate_scaling(
    c_bar: &Binary32Matrix,
    mu_prime: &PowerOfTwoVector,
    p_product: &BigInt,
    axis: Axis,
) -> PowerOfTwoVector {
    let pp = p_prime(p_product);
    let lanes = mu_prime.len();
    let (rows, cols) = (c_bar.rows(), c_bar.cols());
    let mut exponents = Vec::with_capacity(lanes);
    for lane in 0..lanes {
        let mx = match axis {
            Axis::Rows => (0..cols).map(|h| *c_bar.get(lane, h)).fold(0.0f32, f32::max),
            Axis::Cols => (0..rows).map(|h| *c_bar.get(h, lane)).fold(0.0f32, f32::max),
        };
        if mx == 0.0 {
            exponents.push(0);
        } else {
            exponents.push(mu_prime.exponents[lane] + scaling_offset(pp, mx) as i16);
        }
    }
    PowerOfTwoVector { exponents }
}

/// trunc(diag(2^e) * M): power-of-two scaling then truncation toward zero,
/// both exact.
pub fn to_integral(
    m: &Binary64Matrix,
    scale: &PowerOfTwoVector,
    axis: Axis,
) -> Result<IntegralMatrix> {
    let limit = exp2i(970);
    let mut out = Vec::with_capacity(m.rows() * m.cols());
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let lane = match axis {
                Axis::Rows => i,
                Axis::Cols => j,
            };
            let scaled = ldexp(*m.get(i, j), scale.exponents[lane] as i32);
            if scaled.abs() >= limit {
                return Err(Error::Overflow(format!(
                    "scaled entry {scaled} exceeds 2^970"
                )));
            }
            out.push(scaled.trunc());
        }
    }
    Ok(Matrix::from_vec(m.rows(), m.cols(), out))
}

/// Per-modulus symmetric residues of an integral matrix.
pub fn residues(a_int: &IntegralMatrix, ms: &ModuliSet) -> Vec<ResidueMatrix> {
    ms.p.iter()
        .map(|&p| ResidueMatrix {
            modulus: p,
            entries: a_int.map(|&v| residue_of_integral(v, p) as i16),
        })
        .collect()
}

/// Round-half-even division of integers: round(r / s) with ties to even.
pub fn round_div_half_even(r: i64, s: i64) -> i64 {
    debug_assert!(s > 0);
    let q = r.div_euclid(s);
    let rem = r.rem_euclid(s);
    match (2 * rem).cmp(&s) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => {
            if q % 2 == 0 {
                q
            } else {
                q + 1
            }
        }
    }
}

/// Decompose a residue matrix into FP8-coded digits.
///
/// Square modulus (radix s = sqrt(p)): D1 = round-half-even(r/s),
/// D2 = r - s*D1. Non-square (s = 16): D1 = sign(r)*ceil(|r|/16),
/// D2 = r - 16*D1, D3 = D1 + D2. All digit magnitudes stay <= 16, so the
/// FP8 encodings are exact.
pub fn digits(r: &ResidueMatrix, is_square: bool, s: i64) -> Result<DigitMatrices> {
    let p = r.modulus;
    let (rows, cols) = (r.entries.rows(), r.entries.cols());
    let mut d1v = Vec::with_capacity(rows * cols);
    let mut d2v = Vec::with_capacity(rows * cols);
    let mut d3v = Vec::with_capacity(if is_square { 0 } else { rows * cols });
    for &e in r.entries.entries() {
        let rv = e as i64;
        if is_square {
            if 2 * rv.abs() > p {
                return Err(Error::ResidueOutOfRange {
                    residue: rv,
                    modulus: p,
                });
            }
            let d1 = round_div_half_even(rv, s);
            let d2 = rv - s * d1;
            debug_assert!(d1.abs() <= 16 && d2.abs() <= 16);
            d1v.push(crate::lowprec::fp8_encode_digit(d1 as i32));
            d2v.push(crate::lowprec::fp8_encode_digit(d2 as i32));
        } else {
            if rv.abs() > 256 {
                return Err(Error::ResidueOutOfRange {
                    residue: rv,
                    modulus: p,
                });
            }
            let d1 = rv.signum() * ((rv.abs() + s - 1) / s);
            let d2 = rv - s * d1;
            let d3 = d1 + d2;
            debug_assert!(d1.abs() <= 16 && d2.abs() <= 15 && d3.abs() <= 16);
            d1v.push(crate::lowprec::fp8_encode_digit(d1 as i32));
            d2v.push(crate::lowprec::fp8_encode_digit(d2 as i32));
            d3v.push(crate::lowprec::fp8_encode_digit(d3 as i32));
        }
    }
    Ok(DigitMatrices {
        modulus: p,
        radix: s,
        d1: Matrix::from_vec(rows, cols, d1v),
        d2: Matrix::from_vec(rows, cols, d2v),
        d3: if is_square {
            None
        } else {
            Some(Matrix::from_vec(rows, cols, d3v))
        },
    })
}

/// Digits for every modulus of an FP8 moduli set.
pub fn digits_for_set(res: &[ResidueMatrix], ms: &ModuliSet) -> Result<Vec<DigitMatrices>> {
    debug_assert_ne!(ms.scheme, Scheme::Int8);
    let s = ms.s.as_ref().expect("fp8 schemes carry radices");
    res.iter()
        .zip(ms.square_flags.iter().zip(s))
        .map(|(r, (&sq, &radix))| digits(r, sq, radix))
        .collect()
}
