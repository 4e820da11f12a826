//! Pairwise-coprime moduli families, the product P, CRT weights, and
//! effective-precision estimates.

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive};

use crate::error::{Error, Result};

/// Which moduli family to construct.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Moduli up to 256, one INT8 product per modulus.
    Int8,
    /// Moduli up to 513, three FP8 products per modulus via Karatsuba.
    Fp8Karatsuba,
    /// Square moduli first (three FP8 products, no reconstruction), then the
    /// Karatsuba tail.
    Fp8Hybrid,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Int8 => "int8",
            Scheme::Fp8Karatsuba => "fp8-karatsuba",
            Scheme::Fp8Hybrid => "fp8-hybrid",
        }
    }

    pub fn max_moduli(self) -> usize {
        match self {
            Scheme::Int8 | Scheme::Fp8Karatsuba => 29,
            Scheme::Fp8Hybrid => 33,
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "int8" => Ok(Scheme::Int8),
            "fp8-karatsuba" => Ok(Scheme::Fp8Karatsuba),
            "fp8-hybrid" => Ok(Scheme::Fp8Hybrid),
            other => Err(Error::InvalidArgument(format!(
                "unknown scheme '{other}' (expected int8, fp8-karatsuba, or fp8-hybrid)"
            ))),
        }
    }
}

/// Square candidates for the hybrid family, largest first.
const HYBRID_SQUARE_ROOTS: [i64; 6] = [33, 32, 31, 29, 25, 23];

/// A constructed moduli family.
#[derive(Debug, Clone)]
pub struct ModuliSet {
    pub scheme: Scheme,
    pub p: Vec<i64>,
    pub square_flags: Vec<bool>,
    /// Digit radix per modulus: sqrt(p) for squares, 16 for non-square FP8
    /// moduli, absent for the int8 family.
    pub s: Option<Vec<i64>>,
}

impl ModuliSet {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

fn gcd(mut a: i64, mut b: i64) -> i64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.abs()
}

/// Greedy construction: scan candidates downward from the family's start and
/// keep a candidate iff it is coprime to everything kept so far.
pub fn build_moduli(scheme: Scheme, n: usize) -> Result<ModuliSet> {
    let max = scheme.max_moduli();
    if n < 2 || n > max {
        return Err(Error::ModulusCountOutOfRange {
            scheme: scheme.name(),
            n,
            min: 2,
            max,
        });
    }

    let mut kept: Vec<i64> = Vec::with_capacity(n);
    let mut square_flags: Vec<bool> = Vec::with_capacity(n);

    if scheme == Scheme::Fp8Hybrid {
        for &r in &HYBRID_SQUARE_ROOTS {
            if kept.len() == n {
                break;
            }
            let cand = r * r;
            if kept.iter().all(|&q| gcd(q, cand) == 1) {
                kept.push(cand);
                square_flags.push(true);
            }
        }
    }

    let start = match scheme {
        Scheme::Int8 => 256,
        Scheme::Fp8Karatsuba | Scheme::Fp8Hybrid => 513,
    };
    let mut cand = start;
    while kept.len() < n && cand >= 2 {
        if kept.iter().all(|&q| gcd(q, cand) == 1) {
            kept.push(cand);
            square_flags.push(false);
        }
        cand -= 1;
    }
    debug_assert_eq!(kept.len(), n);

    let s = match scheme {
        Scheme::Int8 => None,
        Scheme::Fp8Karatsuba => Some(vec![16i64; n]),
        Scheme::Fp8Hybrid => Some(
            kept.iter()
                .zip(&square_flags)
                .map(|(&p, &sq)| if sq { (p as f64).sqrt().round() as i64 } else { 16 })
                .collect(),
        ),
    };

    Ok(ModuliSet {
        scheme,
        p: kept,
        square_flags,
        s,
    })
}

/// CRT reconstruction constants: P = prod(p_l) and weights
/// w_l = q_l * P / p_l with w_l == 1 (mod p_l) and == 0 (mod p_j), j != l.
#[derive(Debug, Clone)]
pub struct CrtPlan {
    pub p_product: BigInt,
    pub weights: Vec<BigInt>,
}

pub fn crt_constants(ms: &ModuliSet) -> CrtPlan {
    crt_constants_for(&ms.p)
}

pub fn crt_constants_for(p: &[i64]) -> CrtPlan {
    let p_product: BigInt = p.iter().map(|&q| BigInt::from(q)).product();
    let weights = p
        .iter()
        .map(|&q| {
            let part = &p_product / q;
            let rem = (&part % q).to_i64().expect("modulus fits i64");
            let inv = mod_inverse(rem.rem_euclid(q), q);
            part * inv
        })
        .collect();
    CrtPlan { p_product, weights }
}

/// Modular inverse by the extended Euclidean algorithm; `a` and `m` must be
/// coprime, which the moduli construction guarantees.
fn mod_inverse(a: i64, m: i64) -> i64 {
    let (mut t, mut new_t) = (0i64, 1i64);
    let (mut r, mut new_r) = (m, a);
    while new_r != 0 {
        let q = r / new_r;
        (t, new_t) = (new_t, t - q * new_t);
        (r, new_r) = (new_r, r - q * new_r);
    }
    assert_eq!(r, 1, "mod_inverse: arguments are not coprime");
    t.rem_euclid(m)
}

/// log2 of a positive big integer with roughly 50 bits of fractional
/// precision: exact bit length plus a correction from the top 64 bits.
pub fn log2_big(x: &BigInt) -> f64 {
    assert!(x.is_positive(), "log2_big requires a positive integer");
    let mag = x.magnitude();
    let bits = mag.bits();
    if bits <= 64 {
        return (mag.to_u64().unwrap() as f64).log2();
    }
    let top = (mag >> (bits - 64)).to_u64().unwrap();
    (bits - 64) as f64 + (top as f64).log2()
}

/// Effective mantissa width the pipeline can carry: log2(sqrt(P/2)).
pub fn effective_bits(ms: &ModuliSet) -> f64 {
    let plan = crt_constants(ms);
    (log2_big(&plan.p_product) - 1.0) / 2.0
}
