//! Exact reference computations: big-integer GEMM over binary64 inputs,
//! error metrics against the exact result, and the deterministic random
//! test-matrix generator.

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::lowprec::Binary64Matrix;
use crate::matrix::Matrix;

/// Decompose a finite binary64 into (mantissa, exponent) with
/// value = mantissa * 2^exponent and |mantissa| < 2^53.
pub fn f64_decode(x: f64) -> (i64, i32) {
    if x == 0.0 {
        return (0, 0);
    }
    let bits = x.abs().to_bits();
    let exp_field = ((bits >> 52) & 0x7FF) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    let (mant, exp) = if exp_field == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp_field - 1075)
    };
    let sign = if x < 0.0 { -1 } else { 1 };
    (sign * mant as i64, exp)
}

/// Round mantissa * 2^exp to the nearest binary64 (ties to even), with
/// overflow to infinity and gradual underflow to zero.
pub fn dyadic_to_f64(mantissa: &BigInt, exp: i64) -> f64 {
    if mantissa.is_zero() {
        return 0.0;
    }
    let neg = mantissa.is_negative();
    let mag = mantissa.magnitude().clone();
    let nbits = mag.bits() as i64;
    let top_exp = nbits - 1 + exp; // value in [2^top_exp, 2^(top_exp+1))
    if top_exp >= 1024 {
        return if neg { f64::NEG_INFINITY } else { f64::INFINITY };
    }
    // exponent of the target unit in the last place
    let lsb_exp = (top_exp - 52).max(-1074);
    let shift = lsb_exp - exp;
    let mut mant_u64 = if shift <= 0 {
        (mag << (-shift) as u64).to_u64().expect("<= 53 bits")
    } else {
        let floor = (&mag >> shift as u64).to_u64().expect("<= 53 bits");
        let round_bit = mag.bit(shift as u64 - 1);
        let sticky = {
            let mask = (num_bigint::BigUint::from(1u32) << (shift as u64 - 1)) - 1u32;
            !(&mag & &mask).is_zero()
        };
        floor + (round_bit && (sticky || floor & 1 == 1)) as u64
    };
    let mut lsb = lsb_exp;
    // a carry out of rounding may add one bit
    if mant_u64 == 1u64 << 53 {
        mant_u64 >>= 1;
        lsb += 1;
        if 52 + lsb > 1023 {
            return if neg { f64::NEG_INFINITY } else { f64::INFINITY };
        }
    }
    let v = compose_f64(mant_u64, lsb);
    if neg {
        -v
    } else {
        v
    }
}

/// mant * 2^lsb for mant < 2^54, exact by construction.
fn compose_f64(mant: u64, lsb: i64) -> f64 {
    let m = mant as f64; // exact, mant <= 2^53
    let mut e = lsb;
    let mut v = m;
    while e > 0 {
        let step = e.min(1000);
        v *= crate::quantize::exp2i(step as i32);
        e -= step;
        if v.is_infinite() {
            return v;
        }
    }
    while e < 0 {
        let step = (-e).min(1000);
        v *= crate::quantize::exp2i(-(step as i32));
        e += step;
    }
    v
}

/// Exact product matrix: per-entry arbitrary-precision significands over one
/// shared binary exponent, so every entry is an exact dyadic rational.
#[derive(Debug, Clone)]
pub struct ExactMatrix {
    rows: usize,
    cols: usize,
    pub entries: Vec<BigInt>,
    pub exp: i64,
}

impl ExactMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, i: usize, j: usize) -> &BigInt {
        &self.entries[i * self.cols + j]
    }

    pub fn entry_f64(&self, i: usize, j: usize) -> f64 {
        dyadic_to_f64(self.entry(i, j), self.exp)
    }

    pub fn to_f64(&self) -> Binary64Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| self.entry_f64(i, j))
    }
}

/// Exact dyadic product of two binary64 matrices.
pub fn exact_gemm(a: &Binary64Matrix, b: &Binary64Matrix) -> Result<ExactMatrix> {
    let k = a.check_matmul(b)?;
    if a.entries().iter().chain(b.entries()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let (m, n) = (a.rows(), b.cols());
    let ad: Vec<(i64, i32)> = a.entries().iter().map(|&v| f64_decode(v)).collect();
    let bd: Vec<(i64, i32)> = b.entries().iter().map(|&v| f64_decode(v)).collect();

    // shared exponent: a lower bound on every nonzero product exponent
    let min_ea = ad.iter().filter(|(m, _)| *m != 0).map(|&(_, e)| e as i64).min();
    let min_eb = bd.iter().filter(|(m, _)| *m != 0).map(|&(_, e)| e as i64).min();
    let shared = match (min_ea, min_eb) {
        (Some(x), Some(y)) => x + y,
        _ => 0,
    };

    let mut entries = vec![BigInt::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = BigInt::zero();
            for h in 0..k {
                let (ma, ea) = ad[i * k + h];
                let (mb, eb) = bd[h * n + j];
                if ma == 0 || mb == 0 {
                    continue;
                }
                let prod = ma as i128 * mb as i128;
                let sh = (ea as i64 + eb as i64 - shared) as u64;
                acc += BigInt::from(prod) << sh;
            }
            entries[i * n + j] = acc;
        }
    }
    Ok(ExactMatrix {
        rows: m,
        cols: n,
        entries,
        exp: shared,
    })
}

/// Exact big-integer product of two integral binary64 matrices.
pub fn exact_int_gemm(a: &Binary64Matrix, b: &Binary64Matrix) -> Result<Matrix<BigInt>> {
    let exact = exact_gemm(a, b)?;
    Ok(Matrix::from_fn(exact.rows, exact.cols, |i, j| {
        // integral inputs make every entry an integer, so a negative shared
        // exponent only strips trailing zero bits
        if exact.exp >= 0 {
            exact.entry(i, j) << exact.exp as u64
        } else {
            exact.entry(i, j) >> (-exact.exp) as u64
        }
    }))
}

/// Error aggregates of a computed matrix against the exact reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub max_rel: f64,
    pub median_rel: f64,
    pub max_abs: f64,
}

/// Relative error per entry (absolute error where the reference is exactly
/// zero), aggregated as max / median / max-abs.
pub fn error_stats(c: &Binary64Matrix, reference: &ExactMatrix) -> Result<ErrorStats> {
    if c.rows() != reference.rows() || c.cols() != reference.cols() {
        return Err(Error::DimensionMismatch {
            left_rows: c.rows(),
            left_cols: c.cols(),
            right_rows: reference.rows(),
            right_cols: reference.cols(),
        });
    }
    let mut rels = Vec::with_capacity(c.rows() * c.cols());
    let mut max_abs = 0.0f64;
    for i in 0..c.rows() {
        for j in 0..c.cols() {
            let got = *c.get(i, j);
            let r = reference.entry(i, j);
            let (mc, ec) = f64_decode(got);
            let common = (ec as i64).min(reference.exp);
            let diff = (BigInt::from(mc) << (ec as i64 - common) as u64)
                - (r << (reference.exp - common) as u64);
            let abs_err = dyadic_to_f64(&diff, common).abs();
            max_abs = max_abs.max(abs_err);
            if r.is_zero() {
                rels.push(got.abs());
            } else {
                rels.push(abs_err / dyadic_to_f64(r, reference.exp).abs());
            }
        }
    }
    rels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = rels.len();
    let median_rel = if n % 2 == 1 {
        rels[n / 2]
    } else {
        0.5 * (rels[n / 2 - 1] + rels[n / 2])
    };
    Ok(ErrorStats {
        max_rel: *rels.last().unwrap_or(&0.0),
        median_rel,
        max_abs,
    })
}

/// xoshiro256** with splitmix64 seeding; fixed here so generated matrices are
/// bitwise reproducible across platforms.
pub struct Rng256 {
    s: [u64; 4],
}

impl Rng256 {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let mut next_sm = move || {
            sm = sm.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = sm;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            z ^ (z >> 31)
        };
        Rng256 {
            s: [next_sm(), next_sm(), next_sm(), next_sm()],
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in (0, 1].
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * crate::quantize::exp2i(-53)
    }

    /// Standard normal via the Box-Muller cosine branch.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Test-matrix generator: entries (u - 0.5) * exp(g * phi) with u uniform in
/// (0, 1] and g standard normal; phi controls the spread of magnitudes.
pub fn gen_matrix(rows: usize, cols: usize, phi: f64, seed: u64) -> Binary64Matrix {
    assert!(phi >= 0.0);
    let mut rng = Rng256::new(seed);
    Matrix::from_fn(rows, cols, |_, _| {
        let g = rng.normal();
        let u = rng.uniform();
        (u - 0.5) * (g * phi).exp()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;

    #[test]
    fn exact_gemm_small() {
        let a = Matrix::from_vec(1, 1, vec![1.5]);
        let b = Matrix::from_vec(1, 1, vec![2.5]);
        assert_eq!(exact_gemm(&a, &b).unwrap().entry_f64(0, 0), 3.75);

        let a = Matrix::from_vec(1, 1, vec![crate::quantize::exp2i(60)]);
        let b = Matrix::from_vec(1, 1, vec![crate::quantize::exp2i(-60)]);
        assert_eq!(exact_gemm(&a, &b).unwrap().entry_f64(0, 0), 1.0);
    }

    #[test]
    fn exact_gemm_catastrophic_cancellation() {
        let a = Matrix::from_vec(1, 2, vec![1.0, 1.0]);
        let b = Matrix::from_vec(2, 1, vec![1.0, -(1.0 - crate::quantize::exp2i(-52))]);
        let c = exact_gemm(&a, &b).unwrap();
        assert_eq!(c.entry_f64(0, 0), crate::quantize::exp2i(-52));
    }

    #[test]
    fn exact_gemm_identity_and_bilinearity() {
        let a = gen_matrix(4, 4, 1.0, 7);
        let id = Binary64Matrix::identity(4);
        let c = exact_gemm(&a, &id).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(c.entry_f64(i, j), *a.get(i, j));
            }
        }
        let a2 = a.map(|&v| 2.0 * v);
        let b = gen_matrix(4, 4, 1.0, 8);
        let c1 = exact_gemm(&a, &b).unwrap();
        let c2 = exact_gemm(&a2, &b).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(2.0 * c1.entry_f64(i, j), c2.entry_f64(i, j));
            }
        }
    }

    #[test]
    fn dyadic_rounding() {
        // 2^53 + 1 rounds to even
        let m = (BigInt::one() << 53) + 1;
        assert_eq!(dyadic_to_f64(&m, 0), 9007199254740992.0);
        // 2^53 + 3 rounds up
        let m = (BigInt::one() << 53) + 3;
        assert_eq!(dyadic_to_f64(&m, 0), 9007199254740996.0);
        assert_eq!(dyadic_to_f64(&BigInt::zero(), 5), 0.0);
        // overflow
        let m = BigInt::one();
        assert_eq!(dyadic_to_f64(&m, 1030), f64::INFINITY);
        assert_eq!(dyadic_to_f64(&(-m), 1030), f64::NEG_INFINITY);
        // underflow to zero
        assert_eq!(dyadic_to_f64(&BigInt::one(), -1100), 0.0);
        // smallest subnormal survives
        assert_eq!(dyadic_to_f64(&BigInt::one(), -1074), crate::quantize::exp2i(-1074));
    }

    #[test]
    fn projection_matches_exhaustive_dot() {
        // 1xkx1 cross-check against exact accumulation done a second way
        let a = gen_matrix(1, 64, 1.5, 42);
        let b = gen_matrix(64, 1, 1.5, 43);
        let via_exact = exact_gemm(&a, &b).unwrap().entry_f64(0, 0);
        // independent route: sort-free pairwise sum in i128/BigInt at a fixed exponent
        let mut acc = BigInt::zero();
        let mut min_e = i64::MAX;
        let pairs: Vec<(i128, i64)> = (0..64)
            .map(|h| {
                let (ma, ea) = f64_decode(*a.get(0, h));
                let (mb, eb) = f64_decode(*b.get(h, 0));
                (ma as i128 * mb as i128, ea as i64 + eb as i64)
            })
            .collect();
        for &(p, e) in &pairs {
            if p != 0 {
                min_e = min_e.min(e);
            }
        }
        for &(p, e) in &pairs {
            if p != 0 {
                acc += BigInt::from(p) << (e - min_e) as u64;
            }
        }
        assert_eq!(via_exact, dyadic_to_f64(&acc, min_e));
    }

    #[test]
    fn exact_int_gemm_cases() {
        let a = Matrix::from_vec(1, 2, vec![3.0, -4.0]);
        let b = Matrix::from_vec(2, 1, vec![5.0, 6.0]);
        let c = exact_int_gemm(&a, &b).unwrap();
        assert_eq!(*c.get(0, 0), BigInt::from(-9));

        let big = crate::quantize::exp2i(80);
        let a = Matrix::from_vec(1, 1, vec![big]);
        let c = exact_int_gemm(&a, &a).unwrap();
        assert_eq!(*c.get(0, 0), BigInt::one() << 160);
    }

    #[test]
    fn error_stats_cases() {
        let a = gen_matrix(3, 5, 0.5, 1);
        let b = gen_matrix(5, 3, 0.5, 2);
        let exact = exact_gemm(&a, &b).unwrap();
        let stats = error_stats(&exact.to_f64(), &exact).unwrap();
        // projection of the exact value is within half an ulp
        assert!(stats.max_rel < crate::quantize::exp2i(-53) * 1.01);

        // single entry off by 1 ulp at 1.0
        let reference = exact_gemm(
            &Matrix::from_vec(1, 1, vec![1.0]),
            &Matrix::from_vec(1, 1, vec![1.0]),
        )
        .unwrap();
        let c = Matrix::from_vec(1, 1, vec![1.0 + crate::quantize::exp2i(-52)]);
        let stats = error_stats(&c, &reference).unwrap();
        assert_eq!(stats.max_rel, crate::quantize::exp2i(-52));
    }

    #[test]
    fn gen_matrix_contract() {
        let m = gen_matrix(10, 10, 0.0, 5);
        assert!(m.entries().iter().all(|&v| -0.5 < v && v <= 0.5));
        assert_eq!(gen_matrix(8, 8, 2.0, 99), gen_matrix(8, 8, 2.0, 99));
        assert_ne!(gen_matrix(8, 8, 2.0, 99), gen_matrix(8, 8, 2.0, 100));
    }

    #[test]
    fn gen_matrix_spread() {
        // std of ln|a / (u - 0.5)| should match phi
        let phi = 2.0;
        let n = 100_000usize;
        let mut rng = Rng256::new(1234);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let g = rng.normal();
            sum += g * phi;
            sumsq += (g * phi) * (g * phi);
        }
        let mean = sum / n as f64;
        let std = (sumsq / n as f64 - mean * mean).sqrt();
        assert!((std - phi).abs() < 0.05, "std {std}");
    }
}
