//! Analytic calculators: the four time models, the two workspace models,
//! matmul counts, effective bits, and the blocked-time estimate. Pure
//! arithmetic; nothing here touches the emulation pipeline.

use crate::error::{Error, Result};
use crate::emulate::Mode;
use crate::moduli::{build_moduli, effective_bits, Scheme};

/// Sustained hardware characteristics feeding the time models.
#[derive(Debug, Clone, Copy)]
pub struct HardwareProfile {
    /// Sustained low-precision GEMM throughput (OP/s for INT8, FLOP/s for FP8).
    pub ops: f64,
    /// Sustained memory bandwidth in bytes/s.
    pub bandwidth: f64,
    /// Dimensionless correction parameter for FP64/control overheads.
    pub correction: f64,
}

impl HardwareProfile {
    pub fn new(ops: f64, bandwidth: f64, correction: f64) -> Result<Self> {
        if !(ops > 0.0 && bandwidth > 0.0 && correction > 0.0) {
            return Err(Error::InvalidArgument(
                "hardware profile fields must all be positive".into(),
            ));
        }
        Ok(HardwareProfile {
            ops,
            bandwidth,
            correction,
        })
    }
}

/// A model evaluation point.
#[derive(Debug, Clone, Copy)]
pub struct ModelQuery {
    pub m: u64,
    pub n: u64,
    pub k: u64,
    pub n_moduli: usize,
    pub scheme: Scheme,
    pub mode: Mode,
}

/// Number of digit matrices per input operand for the FP8 hybrid family:
/// two per square modulus, three per Karatsuba modulus.
pub fn m_of_n(n: usize) -> Result<u64> {
    if !(1..=33).contains(&n) {
        return Err(Error::InvalidArgument(format!(
            "modulus count {n} outside 1..=33"
        )));
    }
    Ok(if n <= 6 { 2 * n as u64 } else { 3 * n as u64 - 6 })
}

/// Digit-matrix count per operand for any scheme (residue matrices for int8).
fn digit_matrices(scheme: Scheme, n: usize) -> Result<u64> {
    Ok(match scheme {
        Scheme::Int8 => n as u64,
        Scheme::Fp8Karatsuba => 3 * n as u64,
        Scheme::Fp8Hybrid => m_of_n(n)?,
    })
}

/// Predicted wall time in seconds for one emulated GEMM.
pub fn time_model(q: &ModelQuery, hw: &HardwareProfile) -> Result<f64> {
    let (m, n, k) = (q.m as f64, q.n as f64, q.k as f64);
    let nn = q.n_moduli as f64;
    let c = hw.correction;
    let b = hw.bandwidth;
    let t = match (q.scheme, q.mode) {
        (Scheme::Int8, Mode::Fast) => {
            2.0 * m * n * k * nn / hw.ops
                + (12.0 + 6.0 * nn + 2.0 * c) * m * n / b
                + ((16.0 + nn + c) * k + 2.0) * (m + n) / b
        }
        (Scheme::Int8, Mode::Accurate) => {
            2.0 * m * n * k * (nn + 1.0) / hw.ops
                + (20.0 + 6.0 * nn + 2.0 * c) * m * n / b
                + (((17.0 + nn + c) * k + 4.0) * (m + n) + 2.0 * k * m + 2.0 * n) / b
        }
        (Scheme::Fp8Karatsuba | Scheme::Fp8Hybrid, Mode::Fast) => {
            let mm = digit_matrices(q.scheme, q.n_moduli)? as f64;
            2.0 * m * n * k * nn / hw.ops
                + (12.0 + 2.0 * c + 4.0 * nn + 4.0 * mm) * m * n / b
                + ((16.0 + mm + c) * k + 2.0) * (m + n) / b
        }
        (Scheme::Fp8Karatsuba | Scheme::Fp8Hybrid, Mode::Accurate) => {
            let mm = digit_matrices(q.scheme, q.n_moduli)? as f64;
            2.0 * m * n * k * (nn + 1.0) / hw.ops
                + (20.0 + 2.0 * c + 4.0 * nn + 4.0 * mm) * m * n / b
                + (((17.0 + mm + c) * k + 4.0) * (m + n) + 2.0 * k * m + 2.0 * n) / b
        }
    };
    Ok(t)
}

/// Equivalent DGEMM throughput 2mnk / T in FLOP/s; zero for empty problems.
pub fn throughput(q: &ModelQuery, hw: &HardwareProfile) -> Result<f64> {
    let t = time_model(q, hw)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * q.m as f64 * q.n as f64 * q.k as f64 / t)
}

/// Working memory footprint in bytes, excluding inputs and output.
pub fn workspace(scheme: Scheme, m: u64, n: u64, k: u64, n_moduli: usize) -> Result<u128> {
    let (m, n, k) = (m as u128, n as u128, k as u128);
    let nn = n_moduli as u128;
    Ok(match scheme {
        Scheme::Int8 => (m * k + k * n + 5 * m * n) * nn + 2 * (m + n),
        Scheme::Fp8Karatsuba | Scheme::Fp8Hybrid => {
            let mm = digit_matrices(scheme, n_moduli)? as u128;
            (m * k + k * n + 4 * m * n) * mm + 2 * nn * m * n + 2 * (m + n)
        }
    })
}

/// Counting families: the slice-based scheme (one parameter S) and the two
/// residue-based schemes (parameter N).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Fp8Ozaki1,
    Fp8Ozaki2,
    Int8Ozaki2,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fp8Ozaki1 => "fp8-ozaki1",
            Method::Fp8Ozaki2 => "fp8-ozaki2",
            Method::Int8Ozaki2 => "int8-ozaki2",
        }
    }
}

/// Number of low-precision matrix multiplications; `param` is S slices for
/// the Ozaki-I row and N moduli otherwise.
pub fn matmul_count(method: Method, mode: Mode, param: usize) -> u64 {
    let p = param as u64;
    match (method, mode) {
        (Method::Fp8Ozaki1, Mode::Fast) => p * (p + 1) / 2,
        (Method::Fp8Ozaki1, Mode::Accurate) => p * p,
        (Method::Fp8Ozaki2, Mode::Fast) => 3 * p,
        (Method::Fp8Ozaki2, Mode::Accurate) => 3 * p + 1,
        (Method::Int8Ozaki2, Mode::Fast) => p,
        (Method::Int8Ozaki2, Mode::Accurate) => p + 1,
    }
}

/// Effective mantissa bits carried by the fixed-point representation:
/// 5S - 1 for the slice scheme, log2(sqrt(P/2)) for the residue schemes.
pub fn method_effective_bits(method: Method, param: usize) -> Result<f64> {
    match method {
        Method::Fp8Ozaki1 => Ok(5.0 * param as f64 - 1.0),
        Method::Fp8Ozaki2 => Ok(effective_bits(&build_moduli(Scheme::Fp8Hybrid, param)?)),
        Method::Int8Ozaki2 => Ok(effective_bits(&build_moduli(Scheme::Int8, param)?)),
    }
}

/// First-order blocked estimate: per-block model time multiplied by the
/// number of blocks in each dimension. Edge effects are ignored.
pub fn blocked_time(
    q: &ModelQuery,
    hw: &HardwareProfile,
    m_blk: u64,
    n_blk: u64,
    k_blk: u64,
) -> Result<f64> {
    if m_blk == 0 || n_blk == 0 || k_blk == 0 {
        return Err(Error::InvalidArgument("block sizes must be positive".into()));
    }
    let block = ModelQuery {
        m: m_blk,
        n: n_blk,
        k: k_blk,
        ..*q
    };
    let count = q.m.div_ceil(m_blk) * q.n.div_ceil(n_blk) * q.k.div_ceil(k_blk);
    Ok(time_model(&block, hw)? * count as f64)
}

/// Round all three dimensions up to multiples of 256, as production kernels
/// require; an optional pre-transform, never applied implicitly.
pub fn pad_to_256(q: &ModelQuery) -> ModelQuery {
    let pad = |x: u64| x.div_ceil(256) * 256;
    ModelQuery {
        m: pad(q.m),
        n: pad(q.n),
        k: pad(q.k),
        ..*q
    }
}

/// Simplest initializer for the correction parameter: the number of
/// low-precision matrix multiplications.
pub fn c_from_matmul_count(scheme: Scheme, mode: Mode, n_moduli: usize) -> f64 {
    crate::emulate::expected_gemm_calls(scheme, mode, n_moduli) as f64
}

/// Rough indicator for platforms with weak FP64 units:
/// (#matmuls) * bandwidth / FP64 throughput.
pub fn c_heuristic(scheme: Scheme, mode: Mode, n_moduli: usize, bandwidth: f64, fp64_flops: f64) -> f64 {
    c_from_matmul_count(scheme, mode, n_moduli) * bandwidth / fp64_flops
}

#[cfg(test)]
mod tests {
    use super::*;

    const DIM: u64 = 16384;

    fn q(scheme: Scheme, mode: Mode, n: usize) -> ModelQuery {
        ModelQuery {
            m: DIM,
            n: DIM,
            k: DIM,
            n_moduli: n,
            scheme,
            mode,
        }
    }

    fn hw(c: f64) -> HardwareProfile {
        HardwareProfile::new(3e15, 7.7e12, c).unwrap()
    }

    #[test]
    fn m_of_n_examples() {
        assert_eq!(m_of_n(6).unwrap(), 12);
        assert_eq!(m_of_n(12).unwrap(), 30);
        assert_eq!(m_of_n(13).unwrap(), 33);
        assert_eq!(m_of_n(1).unwrap(), 2);
        assert!(m_of_n(0).is_err());
        assert!(m_of_n(34).is_err());
    }

    #[test]
    fn i8fast_printed_point() {
        let query = q(Scheme::Int8, Mode::Fast, 16);
        let t = time_model(&query, &hw(16.0)).unwrap();
        assert!((t - 0.055139877047273834).abs() < 1e-12, "{t}");
        let tput = throughput(&query, &hw(16.0)).unwrap();
        assert!((tput / 1e12 - 159.52326144410375).abs() < 1e-6, "{tput}");
    }

    #[test]
    fn sibling_model_points() {
        let t = time_model(&q(Scheme::Int8, Mode::Accurate, 15), &hw(16.0)).unwrap();
        assert!((t - 0.05527933680415695).abs() < 1e-12, "{t}");
        let t = time_model(&q(Scheme::Fp8Hybrid, Mode::Accurate, 12), &hw(37.0)).unwrap();
        assert!((t - 0.05317669930818272).abs() < 1e-12, "{t}");
        let t = time_model(&q(Scheme::Fp8Hybrid, Mode::Fast, 13), &hw(39.0)).unwrap();
        assert!((t - 0.053804197997013886).abs() < 1e-12, "{t}");
    }

    #[test]
    fn empty_problem_is_free() {
        for scheme in [Scheme::Int8, Scheme::Fp8Hybrid, Scheme::Fp8Karatsuba] {
            for mode in [Mode::Fast, Mode::Accurate] {
                let mut query = q(scheme, mode, 12);
                (query.m, query.n, query.k) = (0, 0, 0);
                assert_eq!(time_model(&query, &hw(16.0)).unwrap(), 0.0);
                assert_eq!(throughput(&query, &hw(16.0)).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn monotone_in_ops_and_bandwidth() {
        for scheme in [Scheme::Int8, Scheme::Fp8Hybrid] {
            for mode in [Mode::Fast, Mode::Accurate] {
                let query = q(scheme, mode, 14);
                let base = time_model(&query, &hw(16.0)).unwrap();
                let more_ops =
                    time_model(&query, &HardwareProfile::new(6e15, 7.7e12, 16.0).unwrap())
                        .unwrap();
                let more_bw =
                    time_model(&query, &HardwareProfile::new(3e15, 15.4e12, 16.0).unwrap())
                        .unwrap();
                assert!(more_ops < base);
                assert!(more_bw < base);
            }
        }
    }

    #[test]
    fn accurate_dominates_fast() {
        for scheme in [Scheme::Int8, Scheme::Fp8Hybrid] {
            let fast = time_model(&q(scheme, Mode::Fast, 14), &hw(16.0)).unwrap();
            let acc = time_model(&q(scheme, Mode::Accurate, 14), &hw(16.0)).unwrap();
            assert!(acc > fast);
        }
    }

    #[test]
    fn bandwidth_bracket() {
        let query = q(Scheme::Int8, Mode::Fast, 16);
        let lo = throughput(&query, &HardwareProfile::new(3e15, 2e12, 16.0).unwrap()).unwrap();
        let hi = throughput(&query, &HardwareProfile::new(3e15, 8e12, 16.0).unwrap()).unwrap();
        assert!(lo / 1e12 <= 112.0 * 1.15, "{lo}");
        assert!(hi / 1e12 >= 153.0 * 0.85, "{hi}");
    }

    #[test]
    fn workspace_printed_points() {
        assert_eq!(
            workspace(Scheme::Int8, DIM, DIM, DIM, 14).unwrap(),
            26_306_740_224
        );
        assert_eq!(
            workspace(Scheme::Fp8Hybrid, DIM, DIM, DIM, 12).unwrap(),
            54_760_898_560
        );
        assert_eq!(workspace(Scheme::Int8, 0, 0, 0, 14).unwrap(), 0);
        assert_eq!(workspace(Scheme::Fp8Hybrid, 0, 0, 0, 12).unwrap(), 0);
    }

    #[test]
    fn matmul_count_table_rows() {
        assert_eq!(matmul_count(Method::Fp8Ozaki1, Mode::Fast, 11), 66);
        assert_eq!(matmul_count(Method::Fp8Ozaki1, Mode::Accurate, 11), 121);
        assert_eq!(matmul_count(Method::Fp8Ozaki1, Mode::Fast, 13), 91);
        assert_eq!(matmul_count(Method::Fp8Ozaki2, Mode::Fast, 12), 36);
        assert_eq!(matmul_count(Method::Fp8Ozaki2, Mode::Accurate, 14), 43);
        assert_eq!(matmul_count(Method::Int8Ozaki2, Mode::Fast, 14), 14);
        assert_eq!(matmul_count(Method::Int8Ozaki2, Mode::Accurate, 14), 15);
    }

    #[test]
    fn effective_bits_table_floors() {
        for (s, bits) in [(11, 54.0), (12, 59.0), (13, 64.0)] {
            assert_eq!(method_effective_bits(Method::Fp8Ozaki1, s).unwrap(), bits);
        }
        for (n, floor) in [(12usize, 55.0), (13, 59.0), (14, 64.0)] {
            let e = method_effective_bits(Method::Fp8Ozaki2, n).unwrap();
            assert_eq!(e.floor(), floor, "fp8 N={n}: {e}");
        }
        for (n, floor) in [(14usize, 54.0), (15, 58.0), (16, 62.0), (17, 65.0)] {
            let e = method_effective_bits(Method::Int8Ozaki2, n).unwrap();
            assert_eq!(e.floor(), floor, "int8 N={n}: {e}");
        }
    }

    #[test]
    fn count_matches_pipeline_counter() {
        for scheme in [Scheme::Int8, Scheme::Fp8Hybrid] {
            let method = match scheme {
                Scheme::Int8 => Method::Int8Ozaki2,
                _ => Method::Fp8Ozaki2,
            };
            for mode in [Mode::Fast, Mode::Accurate] {
                assert_eq!(
                    matmul_count(method, mode, 12),
                    crate::emulate::expected_gemm_calls(scheme, mode, 12) as u64
                );
            }
        }
    }

    #[test]
    fn blocked_time_structure() {
        let query = q(Scheme::Int8, Mode::Fast, 16);
        let profile = hw(16.0);
        let full = time_model(&query, &profile).unwrap();
        let same = blocked_time(&query, &profile, DIM, DIM, DIM).unwrap();
        assert_eq!(full, same);

        let half = ModelQuery {
            m: DIM / 2,
            ..query
        };
        let t_half = time_model(&half, &profile).unwrap();
        let t_blocked = blocked_time(&query, &profile, DIM / 2, DIM, DIM).unwrap();
        assert_eq!(t_blocked, 2.0 * t_half);

        let quarter = ModelQuery {
            m: 4096,
            n: 4096,
            ..query
        };
        let t = blocked_time(&query, &profile, 4096, 4096, DIM).unwrap();
        assert_eq!(t, 16.0 * time_model(&quarter, &profile).unwrap());

        assert!(blocked_time(&query, &profile, 0, 1, 1).is_err());
    }

    #[test]
    fn padding_rounds_up() {
        let mut query = q(Scheme::Int8, Mode::Fast, 14);
        (query.m, query.n, query.k) = (100, 256, 257);
        let padded = pad_to_256(&query);
        assert_eq!((padded.m, padded.n, padded.k), (256, 256, 512));
    }

    #[test]
    fn c_heuristics() {
        assert_eq!(c_from_matmul_count(Scheme::Int8, Mode::Accurate, 15), 16.0);
        assert_eq!(c_from_matmul_count(Scheme::Fp8Hybrid, Mode::Fast, 13), 39.0);
        let c = c_heuristic(Scheme::Int8, Mode::Fast, 16, 7.7e12, 4e12);
        assert!((c - 16.0 * 7.7 / 4.0).abs() < 1e-9);
    }

    #[test]
    fn profile_validation() {
        assert!(HardwareProfile::new(0.0, 1.0, 1.0).is_err());
        assert!(HardwareProfile::new(1.0, -1.0, 1.0).is_err());
        assert!(HardwareProfile::new(1.0, 1.0, 0.0).is_err());
    }
}
