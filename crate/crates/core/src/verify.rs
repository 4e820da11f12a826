//! Named invariant checks spanning every module, runnable from the CLI
//! (`crtgemm verify`) and from integration tests. Each check is pure and
//! deterministic; randomized checks use fixed seeds.

use num_bigint::BigInt;
use num_traits::One;

use crate::emulate::{
    expected_gemm_calls, gemm_emulated, modprod_int8, modprod_karatsuba, modprod_square,
    EmulationConfig, Mode,
};
use crate::lowprec::{fp8_decode, fp8_encode, Binary64Matrix, RoundingMode};
use crate::matrix::Matrix;
use crate::models;
use crate::moduli::{build_moduli, crt_constants, Scheme};
use crate::oracle::{exact_gemm, Rng256};
use crate::quantize::{digits, symmetric_mod, ResidueMatrix};

/// Outcome of one named invariant.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn pass(name: &'static str, detail: impl Into<String>) -> Self {
        Check {
            name,
            passed: true,
            detail: detail.into(),
        }
    }

    fn fail(name: &'static str, detail: impl Into<String>) -> Self {
        Check {
            name,
            passed: false,
            detail: detail.into(),
        }
    }

    fn from_count(name: &'static str, failures: usize, total: usize) -> Self {
        if failures == 0 {
            Check::pass(name, format!("{total} cases"))
        } else {
            Check::fail(name, format!("{failures} of {total} cases failed"))
        }
    }
}

/// Run every invariant. `deep` raises the randomized case counts.
pub fn run_all(deep: bool) -> Vec<Check> {
    vec![
        moduli_prefixes(),
        moduli_pairwise_coprime(),
        crt_weight_congruences(),
        precision_thresholds(),
        fp8_codec_roundtrip(),
        digit_reconstruction(0),
        modular_products_vs_oracle(if deep { 100 } else { 25 }),
        crt_roundtrip(if deep { 1000 } else { 100 }),
        identity_emulation(),
        integer_exactness(if deep { 20 } else { 3 }),
        table2_counts_and_bits(),
        workspace_values(),
        model_monotonicity_and_bracket(),
        gemm_call_accounting(),
    ]
}

pub fn moduli_prefixes() -> Check {
    const NAME: &str = "moduli-prefixes";
    let want: [(Scheme, [i64; 10]); 3] = [
        (
            Scheme::Int8,
            [256, 255, 253, 251, 247, 241, 239, 233, 229, 227],
        ),
        (
            Scheme::Fp8Karatsuba,
            [513, 512, 511, 509, 505, 503, 499, 493, 491, 487],
        ),
        (
            Scheme::Fp8Hybrid,
            [1089, 1024, 961, 841, 625, 529, 511, 509, 503, 499],
        ),
    ];
    for (scheme, prefix) in want {
        match build_moduli(scheme, 10) {
            Ok(ms) if ms.p == prefix => {}
            _ => return Check::fail(NAME, format!("{} prefix mismatch", scheme.name())),
        }
    }
    Check::pass(NAME, "all three 10-entry prefixes match")
}

pub fn moduli_pairwise_coprime() -> Check {
    const NAME: &str = "moduli-pairwise-coprime";
    for scheme in [Scheme::Int8, Scheme::Fp8Karatsuba, Scheme::Fp8Hybrid] {
        let ms = build_moduli(scheme, scheme.max_moduli()).expect("max count is valid");
        for i in 0..ms.len() {
            for j in 0..i {
                if num_integer::gcd(ms.p[i], ms.p[j]) != 1 {
                    return Check::fail(
                        NAME,
                        format!("{}: gcd({}, {}) > 1", scheme.name(), ms.p[i], ms.p[j]),
                    );
                }
            }
        }
    }
    Check::pass(NAME, "all families coprime at max N")
}

pub fn crt_weight_congruences() -> Check {
    const NAME: &str = "crt-weight-congruences";
    let mut cases = 0;
    for scheme in [Scheme::Int8, Scheme::Fp8Karatsuba, Scheme::Fp8Hybrid] {
        let ms = build_moduli(scheme, 12).unwrap();
        let plan = crt_constants(&ms);
        for (l, w) in plan.weights.iter().enumerate() {
            for (j, &q) in ms.p.iter().enumerate() {
                let r = ((w % q) + q) % q;
                let want = if j == l { BigInt::one() } else { BigInt::from(0) };
                if r != want {
                    return Check::fail(
                        NAME,
                        format!("{}: w_{l} mod {q} != {want}", scheme.name()),
                    );
                }
                cases += 1;
            }
        }
    }
    Check::pass(NAME, format!("{cases} congruences"))
}

pub fn precision_thresholds() -> Check {
    const NAME: &str = "precision-thresholds";
    // (scheme, N, P/2 must exceed 2^lo) and family maxima (P/2 below 2^hi)
    let lower = [
        (Scheme::Int8, 14, 109u32),
        (Scheme::Fp8Karatsuba, 13, 115),
        (Scheme::Fp8Hybrid, 12, 110),
    ];
    let upper = [
        (Scheme::Int8, 341u32),
        (Scheme::Fp8Karatsuba, 713),
        (Scheme::Fp8Hybrid, 746),
    ];
    for (scheme, n, lo) in lower {
        let p = crt_constants(&build_moduli(scheme, n).unwrap()).p_product;
        if p / 2 <= BigInt::one() << lo {
            return Check::fail(NAME, format!("{} N={n}: P/2 <= 2^{lo}", scheme.name()));
        }
    }
    for (scheme, hi) in upper {
        let n = scheme.max_moduli();
        let p = crt_constants(&build_moduli(scheme, n).unwrap()).p_product;
        if p / 2 >= BigInt::one() << hi {
            return Check::fail(NAME, format!("{} N={n}: P/2 >= 2^{hi}", scheme.name()));
        }
    }
    Check::pass(NAME, "exact big-integer bounds hold")
}

pub fn fp8_codec_roundtrip() -> Check {
    const NAME: &str = "fp8-codec-roundtrip";
    for b in 0u16..=255 {
        let c = crate::lowprec::Fp8Code(b as u8);
        if c.is_nan() {
            continue;
        }
        let v = fp8_decode(c);
        for mode in [
            RoundingMode::NearestEven,
            RoundingMode::TowardZero,
            RoundingMode::TowardPositive,
            RoundingMode::TowardNegative,
        ] {
            if fp8_encode(v, mode).ok() != Some(c) {
                return Check::fail(NAME, format!("code {b:#04x} fails under {mode:?}"));
            }
        }
    }
    Check::pass(NAME, "254 codes x 4 modes")
}

/// Exhaustive s*D1 + D2 == r over every legal residue of every hybrid
/// modulus. `perturb` shifts the reconstruction and exists so tests can
/// demonstrate that a broken digit rule is caught by name.
pub fn digit_reconstruction(perturb: i64) -> Check {
    const NAME: &str = "digit-reconstruction";
    let ms = build_moduli(Scheme::Fp8Hybrid, Scheme::Fp8Hybrid.max_moduli()).unwrap();
    let s = ms.s.as_ref().unwrap();
    let mut failures = 0usize;
    let mut total = 0usize;
    for (l, &p) in ms.p.iter().enumerate() {
        let is_square = ms.square_flags[l];
        let lo = -(p / 2);
        let hi = (p - 1) / 2;
        for r in lo..=hi {
            total += 1;
            let rm = ResidueMatrix {
                modulus: p,
                entries: Matrix::from_vec(1, 1, vec![r as i16]),
            };
            let d = match digits(&rm, is_square, s[l]) {
                Ok(d) => d,
                Err(_) => {
                    failures += 1;
                    continue;
                }
            };
            let d1 = fp8_decode(*d.d1.get(0, 0)) as i64;
            let d2 = fp8_decode(*d.d2.get(0, 0)) as i64;
            if s[l] * d1 + d2 + perturb != r {
                failures += 1;
            }
        }
    }
    Check::from_count(NAME, failures, total)
}

/// Random modular products against a 64-bit integer oracle, covering the
/// int8, square, and Karatsuba paths.
pub fn modular_products_vs_oracle(instances: usize) -> Check {
    const NAME: &str = "modular-products-vs-oracle";
    let mut rng = Rng256::new(0xC0FFEE);
    let mut failures = 0usize;
    let dims = 4usize;
    let draw = |rng: &mut Rng256, p: i64| -> ResidueMatrix {
        ResidueMatrix {
            modulus: p,
            entries: Matrix::from_fn(dims, dims, |_, _| {
                symmetric_mod(rng.next_u64() as i64, p) as i16
            }),
        }
    };
    let brute = |a: &ResidueMatrix, b: &ResidueMatrix| -> Matrix<i64> {
        Matrix::from_fn(dims, dims, |i, j| {
            let mut acc = 0i64;
            for h in 0..dims {
                acc += *a.entries.get(i, h) as i64 * *b.entries.get(h, j) as i64;
            }
            symmetric_mod(acc, a.modulus)
        })
    };
    let int8_ps = [256i64, 255, 253, 251, 247];
    let square_ps = [(1089i64, 33i64), (1024, 32), (961, 31), (529, 23)];
    let kara_ps = [513i64, 512, 511, 509, 505];
    for i in 0..instances {
        // int8 path
        let p = int8_ps[i % int8_ps.len()];
        let (a, b) = (draw(&mut rng, p), draw(&mut rng, p));
        let got = modprod_int8(&a, &b).unwrap();
        if got.entries.map(|&v| v as i64) != brute(&a, &b) {
            failures += 1;
        }
        // square path
        let (p, s) = square_ps[i % square_ps.len()];
        let (a, b) = (draw(&mut rng, p), draw(&mut rng, p));
        let da = crate::quantize::digits(&a, true, s).unwrap();
        let db = crate::quantize::digits(&b, true, s).unwrap();
        if modprod_square(&da, &db).unwrap().entries.map(|&v| v as i64) != brute(&a, &b) {
            failures += 1;
        }
        // karatsuba path
        let p = kara_ps[i % kara_ps.len()];
        let (a, b) = (draw(&mut rng, p), draw(&mut rng, p));
        let da = crate::quantize::digits(&a, false, 16).unwrap();
        let db = crate::quantize::digits(&b, false, 16).unwrap();
        if modprod_karatsuba(&da, &db).unwrap().entries.map(|&v| v as i64) != brute(&a, &b) {
            failures += 1;
        }
    }
    Check::from_count(NAME, failures, 3 * instances)
}

pub fn crt_roundtrip(instances: usize) -> Check {
    const NAME: &str = "crt-roundtrip";
    let mut rng = Rng256::new(0xCB7);
    let mut failures = 0usize;
    for scheme in [Scheme::Int8, Scheme::Fp8Karatsuba, Scheme::Fp8Hybrid] {
        let ms = build_moduli(scheme, 12).unwrap();
        let plan = crt_constants(&ms);
        // P exceeds 2^100 for every family at N=12, so any |x| < 2^62
        // lies in the symmetric range and must reconstruct exactly.
        for _ in 0..instances {
            let x = rng.next_u64() as i64 >> 1;
            let res: Vec<ResidueMatrix> = ms
                .p
                .iter()
                .map(|&p| ResidueMatrix {
                    modulus: p,
                    entries: Matrix::from_vec(1, 1, vec![symmetric_mod(x, p) as i16]),
                })
                .collect();
            let c = crate::emulate::crt_combine(&res, &plan).unwrap();
            if *c.get(0, 0) != BigInt::from(x) {
                failures += 1;
            }
        }
    }
    Check::from_count(NAME, failures, 3 * instances)
}

pub fn identity_emulation() -> Check {
    const NAME: &str = "identity-emulation";
    let id = Binary64Matrix::identity(8);
    for (scheme, n) in [
        (Scheme::Int8, 14),
        (Scheme::Fp8Karatsuba, 13),
        (Scheme::Fp8Hybrid, 12),
    ] {
        for mode in [Mode::Fast, Mode::Accurate] {
            let cfg = EmulationConfig::new(scheme, mode, n);
            match gemm_emulated(&id, &id, &cfg) {
                Ok(out) if out.c == id => {}
                _ => {
                    return Check::fail(
                        NAME,
                        format!("{} {} not exact on identity", scheme.name(), mode.name()),
                    )
                }
            }
        }
    }
    Check::pass(NAME, "I*I exact for all scheme/mode pairs")
}

/// Integer inputs in [-2^20, 2^20] must multiply without any error.
pub fn integer_exactness(seeds: usize) -> Check {
    const NAME: &str = "integer-exactness";
    let mut failures = 0usize;
    for seed in 0..seeds as u64 {
        let mut rng = Rng256::new(0x1AB0 + seed);
        let mut draw = |rows: usize, cols: usize| -> Binary64Matrix {
            Matrix::from_fn(rows, cols, |_, _| {
                (rng.next_u64() % (1 << 21)) as f64 - (1 << 20) as f64
            })
        };
        let a = draw(16, 64);
        let b = draw(64, 16);
        let exact = exact_gemm(&a, &b).unwrap().to_f64();
        let cfg = EmulationConfig::new(Scheme::Fp8Hybrid, Mode::Accurate, 12);
        let out = gemm_emulated(&a, &b, &cfg).unwrap();
        if out.c != exact {
            failures += 1;
        }
    }
    Check::from_count(NAME, failures, seeds)
}

pub fn table2_counts_and_bits() -> Check {
    const NAME: &str = "table2-counts-and-bits";
    use models::{matmul_count, method_effective_bits, Method};
    let count_rows: [(Method, usize, u64, u64); 10] = [
        (Method::Fp8Ozaki1, 11, 66, 121),
        (Method::Fp8Ozaki1, 12, 78, 144),
        (Method::Fp8Ozaki1, 13, 91, 169),
        (Method::Fp8Ozaki2, 12, 36, 37),
        (Method::Fp8Ozaki2, 13, 39, 40),
        (Method::Fp8Ozaki2, 14, 42, 43),
        (Method::Int8Ozaki2, 14, 14, 15),
        (Method::Int8Ozaki2, 15, 15, 16),
        (Method::Int8Ozaki2, 16, 16, 17),
        (Method::Int8Ozaki2, 17, 17, 18),
    ];
    for (method, p, fast, acc) in count_rows {
        if matmul_count(method, Mode::Fast, p) != fast
            || matmul_count(method, Mode::Accurate, p) != acc
        {
            return Check::fail(NAME, format!("{} param {p} count mismatch", method.name()));
        }
    }
    let bit_rows: [(Method, usize, f64); 10] = [
        (Method::Fp8Ozaki1, 11, 54.0),
        (Method::Fp8Ozaki1, 12, 59.0),
        (Method::Fp8Ozaki1, 13, 64.0),
        (Method::Fp8Ozaki2, 12, 55.0),
        (Method::Fp8Ozaki2, 13, 59.0),
        (Method::Fp8Ozaki2, 14, 64.0),
        (Method::Int8Ozaki2, 14, 54.0),
        (Method::Int8Ozaki2, 15, 58.0),
        (Method::Int8Ozaki2, 16, 62.0),
        (Method::Int8Ozaki2, 17, 65.0),
    ];
    for (method, p, floor) in bit_rows {
        let bits = match method {
            Method::Fp8Ozaki1 => method_effective_bits(method, p).unwrap(),
            _ => method_effective_bits(method, p).unwrap().floor(),
        };
        if bits != floor {
            return Check::fail(
                NAME,
                format!("{} param {p}: bits {bits} != {floor}", method.name()),
            );
        }
    }
    Check::pass(NAME, "all printed rows reproduced")
}

pub fn workspace_values() -> Check {
    const NAME: &str = "workspace-values";
    let d = 16384u64;
    let w_i8 = models::workspace(Scheme::Int8, d, d, d, 14).unwrap();
    let w_f8 = models::workspace(Scheme::Fp8Hybrid, d, d, d, 12).unwrap();
    if w_i8 != 26_306_740_224 {
        return Check::fail(NAME, format!("W_i8 = {w_i8}"));
    }
    if w_f8 != 54_760_898_560 {
        return Check::fail(NAME, format!("W_f8 = {w_f8}"));
    }
    Check::pass(NAME, "both printed byte counts match exactly")
}

pub fn model_monotonicity_and_bracket() -> Check {
    const NAME: &str = "model-monotonicity-and-bracket";
    use models::{throughput, time_model, HardwareProfile, ModelQuery};
    let d = 16384u64;
    for scheme in [Scheme::Int8, Scheme::Fp8Hybrid] {
        for mode in [Mode::Fast, Mode::Accurate] {
            let q = ModelQuery {
                m: d,
                n: d,
                k: d,
                n_moduli: 14,
                scheme,
                mode,
            };
            let base = time_model(&q, &HardwareProfile::new(3e15, 7.7e12, 16.0).unwrap()).unwrap();
            let ops2 = time_model(&q, &HardwareProfile::new(6e15, 7.7e12, 16.0).unwrap()).unwrap();
            let bw2 = time_model(&q, &HardwareProfile::new(3e15, 15.4e12, 16.0).unwrap()).unwrap();
            if !(ops2 < base && bw2 < base) {
                return Check::fail(
                    NAME,
                    format!("{} {} not monotone", scheme.name(), mode.name()),
                );
            }
        }
    }
    let q = ModelQuery {
        m: d,
        n: d,
        k: d,
        n_moduli: 16,
        scheme: Scheme::Int8,
        mode: Mode::Fast,
    };
    let lo = throughput(&q, &HardwareProfile::new(3e15, 2e12, 16.0).unwrap()).unwrap() / 1e12;
    let hi = throughput(&q, &HardwareProfile::new(3e15, 8e12, 16.0).unwrap()).unwrap() / 1e12;
    if lo > 112.0 * 1.15 || hi < 153.0 * 0.85 {
        return Check::fail(NAME, format!("bracket [{lo:.1}, {hi:.1}] TFLOP/s misses"));
    }
    Check::pass(NAME, format!("bracket [{lo:.1}, {hi:.1}] TFLOP/s"))
}

pub fn gemm_call_accounting() -> Check {
    const NAME: &str = "gemm-call-accounting";
    let mut rng = Rng256::new(5);
    let a = Matrix::from_fn(4, 16, |_, _| rng.normal());
    let b = Matrix::from_fn(16, 4, |_, _| rng.normal());
    for (scheme, n) in [(Scheme::Int8, 14), (Scheme::Fp8Hybrid, 12)] {
        for mode in [Mode::Fast, Mode::Accurate] {
            let out = gemm_emulated(&a, &b, &EmulationConfig::new(scheme, mode, n)).unwrap();
            if out.stats.gemm_calls != expected_gemm_calls(scheme, mode, n) {
                return Check::fail(
                    NAME,
                    format!("{} {}: {} calls", scheme.name(), mode.name(), out.stats.gemm_calls),
                );
            }
        }
    }
    Check::pass(NAME, "stats counters match the closed-form counts")
}

/// Convenience for tests: run everything, panic with the report on failure.
pub fn assert_all(deep: bool) {
    let checks = run_all(deep);
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed).collect();
    assert!(
        failed.is_empty(),
        "invariants failed: {:?}",
        failed
            .iter()
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect::<Vec<_>>()
    );
}
