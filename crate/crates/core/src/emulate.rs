//! End-to-end emulation pipelines: modular products over the simulated
//! low-precision units, Karatsuba / square-modulus reconstruction, CRT
//! combination, inverse scaling, and m/n blocking.

use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_integer::Integer;

use crate::error::{Error, Result};
use crate::lowprec::{fp8_gemm, int8_gemm, Binary32Matrix, Binary64Matrix};
use crate::matrix::Matrix;
use crate::moduli::{build_moduli, crt_constants, CrtPlan, Scheme};
use crate::oracle::dyadic_to_f64;
use crate::quantize::{
    accurate_prescale, accurate_prescale_int8, accurate_scaling, bound_matrix, digits_for_set,
    fast_scaling, residues, symmetric_mod, to_integral, Axis, DigitMatrices, PowerOfTwoVector,
    ResidueMatrix,
};

/// Scaling-vector estimation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Cauchy-Schwarz norm bound; no extra low-precision product.
    Fast,
    /// Bound estimated by one auxiliary low-precision product.
    Accurate,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Fast => "fast",
            Mode::Accurate => "accurate",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Mode::Fast),
            "accurate" => Ok(Mode::Accurate),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode '{other}' (expected fast or accurate)"
            ))),
        }
    }
}

/// Pipeline configuration. The k dimension is never blocked.
#[derive(Debug, Clone)]
pub struct EmulationConfig {
    pub scheme: Scheme,
    pub mode: Mode,
    pub n_moduli: usize,
    pub m_block: Option<usize>,
    pub n_block: Option<usize>,
}

impl EmulationConfig {
    pub fn new(scheme: Scheme, mode: Mode, n_moduli: usize) -> Self {
        EmulationConfig {
            scheme,
            mode,
            n_moduli,
            m_block: None,
            n_block: None,
        }
    }
}

/// Wall-clock split across the pipeline phases; the five buckets partition
/// the total elapsed time of a run.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseStats {
    pub quant: Duration,
    pub gemms: Duration,
    pub requant: Duration,
    pub dequant: Duration,
    pub others: Duration,
    /// Number of simulated low-precision matrix multiplications.
    pub gemm_calls: usize,
}

impl PhaseStats {
    pub fn total(&self) -> Duration {
        self.quant + self.gemms + self.requant + self.dequant + self.others
    }

    fn absorb(&mut self, other: &PhaseStats) {
        self.quant += other.quant;
        self.gemms += other.gemms;
        self.requant += other.requant;
        self.dequant += other.dequant;
        self.others += other.others;
        self.gemm_calls += other.gemm_calls;
    }
}

#[derive(Debug, Clone)]
pub struct EmulationResult {
    pub c: Binary64Matrix,
    pub stats: PhaseStats,
    /// Set when inverse scaling overflowed to infinity or flushed a nonzero
    /// reconstruction to zero.
    pub range_warning: bool,
}

/// Low-precision matmul count for a configuration (Table-2 accounting).
pub fn expected_gemm_calls(scheme: Scheme, mode: Mode, n_moduli: usize) -> usize {
    let per_modulus = match scheme {
        Scheme::Int8 => 1,
        Scheme::Fp8Karatsuba | Scheme::Fp8Hybrid => 3,
    };
    per_modulus * n_moduli + matches!(mode, Mode::Accurate) as usize
}

/// mod(A_l B_l, p_l) on the INT8 unit: one exact integer product followed by
/// a symmetric reduction.
pub fn modprod_int8(a: &ResidueMatrix, b: &ResidueMatrix) -> Result<ResidueMatrix> {
    if a.modulus != b.modulus {
        return Err(Error::ModulusMismatch {
            expected: a.modulus,
            got: b.modulus,
        });
    }
    let raw = int8_gemm(&residue_to_i8(a), &residue_to_i8(b))?;
    Ok(reduce_int8(&raw, a.modulus))
}

fn residue_to_i8(r: &ResidueMatrix) -> Matrix<i8> {
    debug_assert!(r.modulus <= 256);
    r.entries.map(|&v| {
        debug_assert!((-128..=127).contains(&(v as i64)));
        v as i8
    })
}

fn reduce_int8(raw: &Matrix<i32>, p: i64) -> ResidueMatrix {
    ResidueMatrix {
        modulus: p,
        entries: raw.map(|&v| symmetric_mod(v as i64, p) as i16),
    }
}

/// The three FP8 products for a square modulus p = s^2:
/// D1^A D2^B, D2^A D1^B, D2^A D2^B. The s^2 D1^A D1^B term vanishes mod p.
pub fn square_products(a: &DigitMatrices, b: &DigitMatrices) -> Result<[Binary32Matrix; 3]> {
    Ok([
        fp8_gemm(&a.d1, &b.d2)?,
        fp8_gemm(&a.d2, &b.d1)?,
        fp8_gemm(&a.d2, &b.d2)?,
    ])
}

/// Combine the square-modulus products: mod(s*(C1 + C2) + C3, p) in 64-bit
/// integers (the products are exact integers of magnitude <= 2^24).
pub fn square_combine(products: &[Binary32Matrix; 3], p: i64, s: i64) -> ResidueMatrix {
    let [c1, c2, c3] = products;
    ResidueMatrix {
        modulus: p,
        entries: Matrix::from_fn(c1.rows(), c1.cols(), |i, j| {
            let v = s * (*c1.get(i, j) as i64 + *c2.get(i, j) as i64) + *c3.get(i, j) as i64;
            symmetric_mod(v, p) as i16
        }),
    }
}

/// mod(A_l B_l, p_l) for a square modulus without Karatsuba reconstruction.
pub fn modprod_square(a: &DigitMatrices, b: &DigitMatrices) -> Result<ResidueMatrix> {
    check_digit_pair(a, b)?;
    if a.radix * a.radix != a.modulus {
        return Err(Error::InvalidArgument(format!(
            "modprod_square requires a square modulus, got {}",
            a.modulus
        )));
    }
    Ok(square_combine(&square_products(a, b)?, a.modulus, a.radix))
}

/// The three Karatsuba products C^(x) = D_x^A D_x^B for x in {1,2,3}.
pub fn karatsuba_products(a: &DigitMatrices, b: &DigitMatrices) -> Result<[Binary32Matrix; 3]> {
    let a3 = a.d3.as_ref().ok_or_else(|| {
        Error::InvalidArgument("karatsuba products require D3 digit matrices".into())
    })?;
    let b3 = b.d3.as_ref().ok_or_else(|| {
        Error::InvalidArgument("karatsuba products require D3 digit matrices".into())
    })?;
    Ok([
        fp8_gemm(&a.d1, &b.d1)?,
        fp8_gemm(&a.d2, &b.d2)?,
        fp8_gemm(a3, b3)?,
    ])
}

/// Karatsuba reconstruction 256 C1 + C2 + 16 (C3 - C1 - C2) followed by the
/// symmetric reduction. Intermediates reach 2^32, hence the 64-bit combine.
pub fn karatsuba_combine(products: &[Binary32Matrix; 3], p: i64) -> ResidueMatrix {
    let [c1, c2, c3] = products;
    ResidueMatrix {
        modulus: p,
        entries: Matrix::from_fn(c1.rows(), c1.cols(), |i, j| {
            let (x1, x2, x3) = (
                *c1.get(i, j) as i64,
                *c2.get(i, j) as i64,
                *c3.get(i, j) as i64,
            );
            symmetric_mod(256 * x1 + x2 + 16 * (x3 - x1 - x2), p) as i16
        }),
    }
}

/// mod(A_l B_l, p_l) for a non-square modulus via Karatsuba.
pub fn modprod_karatsuba(a: &DigitMatrices, b: &DigitMatrices) -> Result<ResidueMatrix> {
    check_digit_pair(a, b)?;
    if a.radix * a.radix == a.modulus {
        return Err(Error::InvalidArgument(format!(
            "square modulus {} must use modprod_square",
            a.modulus
        )));
    }
    Ok(karatsuba_combine(&karatsuba_products(a, b)?, a.modulus))
}

fn check_digit_pair(a: &DigitMatrices, b: &DigitMatrices) -> Result<()> {
    if a.modulus != b.modulus {
        return Err(Error::ModulusMismatch {
            expected: a.modulus,
            got: b.modulus,
        });
    }
    Ok(())
}

/// Elementwise CRT reconstruction: symmetric_mod(sum_l w_l c_l, P).
pub fn crt_combine(res: &[ResidueMatrix], plan: &CrtPlan) -> Result<Matrix<BigInt>> {
    if res.len() != plan.weights.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} residue matrices, got {}",
            plan.weights.len(),
            res.len()
        )));
    }
    let first = &res[0].entries;
    for r in res {
        if !first.same_shape(&r.entries) {
            return Err(Error::DimensionMismatch {
                left_rows: first.rows(),
                left_cols: first.cols(),
                right_rows: r.entries.rows(),
                right_cols: r.entries.cols(),
            });
        }
    }
    let p = &plan.p_product;
    let half = (p + 1u32) / 2u32;
    Ok(Matrix::from_fn(first.rows(), first.cols(), |i, j| {
        let mut acc = BigInt::from(0);
        for (r, w) in res.iter().zip(&plan.weights) {
            acc += w * *r.entries.get(i, j);
        }
        let mut v = acc.mod_floor(p);
        if v >= half {
            v -= p;
        }
        v
    }))
}

/// Inverse scaling: entry (i,j) is the round-to-nearest-even binary64 value
/// of c'_ij * 2^-(e(mu_i) + e(nu_j)). Returns the matrix plus a flag for
/// overflow / flush-to-zero events.
pub fn inverse_scale(
    c_prime: &Matrix<BigInt>,
    mu: &PowerOfTwoVector,
    nu: &PowerOfTwoVector,
) -> (Binary64Matrix, bool) {
    use num_traits::Zero;
    let mut warning = false;
    let c = Matrix::from_fn(c_prime.rows(), c_prime.cols(), |i, j| {
        let v = c_prime.get(i, j);
        let shift = mu.exponents[i] as i64 + nu.exponents[j] as i64;
        let out = dyadic_to_f64(v, -shift);
        if out.is_infinite() || (out == 0.0 && !v.is_zero()) {
            warning = true;
        }
        out
    });
    (c, warning)
}

#[derive(Clone, Copy)]
enum Phase {
    Quant,
    Gemms,
    Requant,
    Dequant,
    Others,
}

struct PhaseClock {
    start: Instant,
    mark: Instant,
    stats: PhaseStats,
}

impl PhaseClock {
    fn new() -> Self {
        let now = Instant::now();
        PhaseClock {
            start: now,
            mark: now,
            stats: PhaseStats::default(),
        }
    }

    /// Charge the time since the previous mark to one phase bucket.
    fn charge(&mut self, phase: Phase) {
        let now = Instant::now();
        let d = now - self.mark;
        self.mark = now;
        match phase {
            Phase::Quant => self.stats.quant += d,
            Phase::Gemms => self.stats.gemms += d,
            Phase::Requant => self.stats.requant += d,
            Phase::Dequant => self.stats.dequant += d,
            Phase::Others => self.stats.others += d,
        }
    }

    fn finish(mut self) -> PhaseStats {
        // "others" absorbs everything not charged to a named phase
        let accounted =
            self.stats.quant + self.stats.gemms + self.stats.requant + self.stats.dequant;
        self.stats.others = self.start.elapsed().saturating_sub(accounted);
        self.stats
    }
}

fn validate_inputs(a: &Binary64Matrix, b: &Binary64Matrix, scheme: Scheme) -> Result<usize> {
    let k = a.check_matmul(b)?;
    let max_k = match scheme {
        Scheme::Int8 => crate::lowprec::INT8_GEMM_MAX_K,
        _ => crate::lowprec::FP8_GEMM_MAX_K,
    };
    if k > max_k {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {} limit {max_k}",
            scheme.name()
        )));
    }
    if a.entries().iter().chain(b.entries()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(k)
}

/// Full unblocked emulation of C ~= A*B.
pub fn gemm_emulated(
    a: &Binary64Matrix,
    b: &Binary64Matrix,
    cfg: &EmulationConfig,
) -> Result<EmulationResult> {
    let k = validate_inputs(a, b, cfg.scheme)?;
    let ms = build_moduli(cfg.scheme, cfg.n_moduli)?;
    let plan = crt_constants(&ms);
    let mut clock = PhaseClock::new();
    clock.charge(Phase::Others); // setup time

    // scaling vectors
    let (mu, nu) = match cfg.mode {
        Mode::Fast => {
            let mu = fast_scaling(a, Axis::Rows, &plan.p_product);
            let nu = fast_scaling(b, Axis::Cols, &plan.p_product);
            clock.charge(Phase::Quant);
            (mu, nu)
        }
        Mode::Accurate => match cfg.scheme {
            Scheme::Int8 => {
                let (mu_prime, a_bar) = accurate_prescale_int8(a, Axis::Rows);
                let (nu_prime, b_bar) = accurate_prescale_int8(b, Axis::Cols);
                clock.charge(Phase::Quant);
                let raw = int8_gemm(&a_bar, &b_bar)?;
                clock.charge(Phase::Gemms);
                clock.stats.gemm_calls += 1;
                let c_bar = bound_from_exact_int8(&raw);
                let mu = accurate_scaling(&c_bar, &mu_prime, &plan.p_product, Axis::Rows);
                let nu = accurate_scaling(&c_bar, &nu_prime, &plan.p_product, Axis::Cols);
                clock.charge(Phase::Quant);
                (mu, nu)
            }
            Scheme::Fp8Karatsuba | Scheme::Fp8Hybrid => {
                let (mu_prime, a_bar) = accurate_prescale(a, Axis::Rows);
                let (nu_prime, b_bar) = accurate_prescale(b, Axis::Cols);
                clock.charge(Phase::Quant);
                let c_bar = bound_matrix(&a_bar, &b_bar, k)?;
                clock.charge(Phase::Gemms);
                clock.stats.gemm_calls += 1;
                let mu = accurate_scaling(&c_bar, &mu_prime, &plan.p_product, Axis::Rows);
                let nu = accurate_scaling(&c_bar, &nu_prime, &plan.p_product, Axis::Cols);
                clock.charge(Phase::Quant);
                (mu, nu)
            }
        },
    };

    // integral conversion + residues (+ digits on the FP8 path)
    let a_int = to_integral(a, &mu, Axis::Rows)?;
    let b_int = to_integral(b, &nu, Axis::Cols)?;
    let a_res = residues(&a_int, &ms);
    let b_res = residues(&b_int, &ms);
    let fp8_digits = match cfg.scheme {
        Scheme::Int8 => None,
        _ => Some((digits_for_set(&a_res, &ms)?, digits_for_set(&b_res, &ms)?)),
    };
    clock.charge(Phase::Quant);

    // per-modulus modular products
    let mut c_res: Vec<ResidueMatrix> = Vec::with_capacity(ms.len());
    match &fp8_digits {
        None => {
            for (ar, br) in a_res.iter().zip(&b_res) {
                let raw = int8_gemm(&residue_to_i8(ar), &residue_to_i8(br))?;
                clock.charge(Phase::Gemms);
                clock.stats.gemm_calls += 1;
                c_res.push(reduce_int8(&raw, ar.modulus));
                clock.charge(Phase::Requant);
            }
        }
        Some((ad, bd)) => {
            for (l, (da, db)) in ad.iter().zip(bd).enumerate() {
                if ms.square_flags[l] {
                    let prods = square_products(da, db)?;
                    clock.charge(Phase::Gemms);
                    clock.stats.gemm_calls += 3;
                    c_res.push(square_combine(&prods, da.modulus, da.radix));
                } else {
                    let prods = karatsuba_products(da, db)?;
                    clock.charge(Phase::Gemms);
                    clock.stats.gemm_calls += 3;
                    c_res.push(karatsuba_combine(&prods, da.modulus));
                }
                clock.charge(Phase::Requant);
            }
        }
    }

    // CRT reconstruction and inverse scaling
    let c_prime = crt_combine(&c_res, &plan)?;
    let (c, range_warning) = inverse_scale(&c_prime, &mu, &nu);
    clock.charge(Phase::Dequant);

    debug_assert_eq!(
        clock.stats.gemm_calls,
        expected_gemm_calls(cfg.scheme, cfg.mode, cfg.n_moduli)
    );
    Ok(EmulationResult {
        c,
        stats: clock.finish(),
        range_warning,
    })
}

/// Exact INT8 bound product widened to binary32 with the (128/127)^2 clamp
/// compensation (see `accurate_prescale_int8`).
fn bound_from_exact_int8(raw: &Matrix<i32>) -> Binary32Matrix {
    let factor = (128.0 / 127.0) * (128.0 / 127.0);
    raw.map(|&c| crate::quantize::f32_round_up(factor * c as f64))
}

/// Blocked emulation: rows of A and columns of B are partitioned and each
/// (row-block, column-block) pair runs the full pipeline with unblocked k.
/// Accurate-mode scaling depends on block-local maxima, so bitwise equality
/// with the unblocked result is not guaranteed.
pub fn gemm_blocked(
    a: &Binary64Matrix,
    b: &Binary64Matrix,
    cfg: &EmulationConfig,
) -> Result<EmulationResult> {
    validate_inputs(a, b, cfg.scheme)?;
    let (m, n) = (a.rows(), b.cols());
    let mb = cfg.m_block.unwrap_or(m).max(1).min(m.max(1));
    let nb = cfg.n_block.unwrap_or(n).max(1).min(n.max(1));
    let inner = EmulationConfig {
        m_block: None,
        n_block: None,
        ..cfg.clone()
    };
    let mut c = Binary64Matrix::filled(m, n, 0.0);
    let mut stats = PhaseStats::default();
    let mut warning = false;
    let mut i0 = 0;
    while i0 < m {
        let i1 = (i0 + mb).min(m);
        let sub_a = Matrix::from_fn(i1 - i0, a.cols(), |i, j| *a.get(i0 + i, j));
        let mut j0 = 0;
        while j0 < n {
            let j1 = (j0 + nb).min(n);
            let sub_b = Matrix::from_fn(b.rows(), j1 - j0, |i, j| *b.get(i, j0 + j));
            let block = gemm_emulated(&sub_a, &sub_b, &inner)?;
            for i in 0..i1 - i0 {
                for j in 0..j1 - j0 {
                    c.set(i0 + i, j0 + j, *block.c.get(i, j));
                }
            }
            stats.absorb(&block.stats);
            warning |= block.range_warning;
            j0 = j1;
        }
        i0 = i1;
    }
    Ok(EmulationResult {
        c,
        stats,
        range_warning: warning,
    })
}
