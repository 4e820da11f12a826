//! Command-line front end: argument types, CSV emitters, and the
//! verification driver. All emitters write to a generic `io::Write` so the
//! integration tests can capture output byte-for-byte.

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::emulate::{gemm_blocked, gemm_emulated, EmulationConfig, Mode};
use crate::error::{Error, Result};
use crate::models::{self, HardwareProfile, Method, ModelQuery};
use crate::moduli::{build_moduli, log2_big, Scheme};
use crate::oracle::{error_stats, exact_gemm, gen_matrix, ExactMatrix};
use crate::verify;

#[derive(Parser)]
#[command(
    name = "crtgemm",
    about = "Emulated FP64 GEMM over simulated INT8/FP8 units, with analytic models",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Tabulate a moduli family with precision and matmul-count columns
    Moduli(ModuliArgs),
    /// Sweep emulated-GEMM accuracy over a parameter grid
    Accuracy(AccuracyArgs),
    /// Emit a predicted-throughput heatmap over an (ops, bandwidth) grid
    Model(ModelArgs),
    /// Run the named invariant suite
    Verify(VerifyArgs),
}

/// "m,n,k" on the command line.
#[derive(Debug, Clone, Copy)]
pub struct DimTriple {
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

impl FromStr for DimTriple {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "expected m,n,k but got '{s}'"
            )));
        }
        let parse = |t: &str| -> Result<usize> {
            t.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad dimension '{t}'")))
        };
        let d = DimTriple {
            m: parse(parts[0])?,
            n: parse(parts[1])?,
            k: parse(parts[2])?,
        };
        if d.m == 0 || d.n == 0 || d.k == 0 {
            return Err(Error::InvalidArgument("dimensions must be positive".into()));
        }
        Ok(d)
    }
}

/// "mB,nB" block sizes.
#[derive(Debug, Clone, Copy)]
pub struct BlockPair {
    pub m: usize,
    pub n: usize,
}

impl FromStr for BlockPair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "expected mB,nB but got '{s}'"
            )));
        }
        let parse = |t: &str| -> Result<usize> {
            t.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad block size '{t}'")))
        };
        Ok(BlockPair {
            m: parse(parts[0])?,
            n: parse(parts[1])?,
        })
    }
}

#[derive(Args)]
pub struct ModuliArgs {
    /// Moduli family
    #[arg(long)]
    pub scheme: Scheme,
    /// Number of moduli N
    #[arg(long = "moduli")]
    pub n_moduli: usize,
    /// Output CSV path (stdout if omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AccuracyArgs {
    /// Problem sizes, repeatable: --dims m,n,k
    #[arg(long, required = true)]
    pub dims: Vec<DimTriple>,
    /// Magnitude-spread parameters, comma separated
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub phi: Vec<f64>,
    /// Schemes to sweep, comma separated
    #[arg(long, value_delimiter = ',', default_value = "fp8-hybrid")]
    pub scheme: Vec<Scheme>,
    /// Modes to sweep, comma separated
    #[arg(long, value_delimiter = ',', default_value = "fast,accurate")]
    pub mode: Vec<Mode>,
    /// Modulus counts to sweep, comma separated
    #[arg(long = "moduli", value_delimiter = ',', default_value = "12")]
    pub n_moduli: Vec<usize>,
    /// Base PRNG seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Row/column block sizes mB,nB (unblocked if omitted)
    #[arg(long)]
    pub block: Option<BlockPair>,
    /// Append wall-clock phase columns (timings are non-deterministic)
    #[arg(long)]
    pub breakdown: bool,
    /// Output CSV path (stdout if omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub scheme: Scheme,
    #[arg(long)]
    pub mode: Mode,
    #[arg(long = "moduli")]
    pub n_moduli: usize,
    #[arg(long)]
    pub dims: DimTriple,
    /// Compute-throughput grid (OP/s or FLOP/s), comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    pub ops: Vec<f64>,
    /// Memory-bandwidth grid (bytes/s), comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    pub bandwidth: Vec<f64>,
    /// Dimensionless correction parameter c
    #[arg(long)]
    pub correction: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Raise randomized case counts
    #[arg(long)]
    pub deep: bool,
}

/// One CSV row per modulus: cumulative precision and matmul counts for the
/// family truncated after that modulus.
pub fn cmd_moduli(scheme: Scheme, n_moduli: usize, w: &mut dyn Write) -> Result<()> {
    let ms = build_moduli(scheme, n_moduli)?;
    let method = match scheme {
        Scheme::Int8 => Method::Int8Ozaki2,
        Scheme::Fp8Karatsuba | Scheme::Fp8Hybrid => Method::Fp8Ozaki2,
    };
    writeln!(
        w,
        "index,p,square,cum_log2_P,effective_bits,matmuls_fast,matmuls_accurate"
    )?;
    let mut product = num_bigint::BigInt::from(1);
    for (l, &p) in ms.p.iter().enumerate() {
        product *= p;
        let cum = log2_big(&product);
        let bits = (cum - 1.0) / 2.0;
        writeln!(
            w,
            "{},{},{},{:.6},{:.6},{},{}",
            l + 1,
            p,
            ms.square_flags[l] as u8,
            cum,
            bits,
            models::matmul_count(method, Mode::Fast, l + 1),
            models::matmul_count(method, Mode::Accurate, l + 1),
        )?;
    }
    Ok(())
}

/// Accuracy sweep. Input matrices come from the fixed generator; seeds are
/// derived per (dims, phi) pair so every scheme/mode/N sees identical data.
/// The same arguments always produce byte-identical CSV unless `breakdown`
/// adds the wall-clock columns.
pub fn cmd_accuracy(args: &AccuracyArgs, w: &mut dyn Write) -> Result<()> {
    write!(w, "m,n,k,phi,scheme,mode,N,max_rel,median_rel,seed")?;
    if args.breakdown {
        write!(
            w,
            ",quant_s,gemms_s,requant_s,dequant_s,others_s,gemm_calls"
        )?;
    }
    writeln!(w)?;

    let mut pair_index = 0u64;
    for &dims in &args.dims {
        for &phi in &args.phi {
            if !(phi >= 0.0) {
                return Err(Error::InvalidArgument(format!("phi must be >= 0, got {phi}")));
            }
            let seed_a = args.seed.wrapping_add(2 * pair_index);
            let seed_b = args.seed.wrapping_add(2 * pair_index + 1);
            pair_index += 1;
            let a = gen_matrix(dims.m, dims.k, phi, seed_a);
            let b = gen_matrix(dims.k, dims.n, phi, seed_b);
            let exact: ExactMatrix = exact_gemm(&a, &b)?;
            for &scheme in &args.scheme {
                for &mode in &args.mode {
                    for &n in &args.n_moduli {
                        let mut cfg = EmulationConfig::new(scheme, mode, n);
                        let out = match args.block {
                            Some(bp) => {
                                cfg.m_block = Some(bp.m);
                                cfg.n_block = Some(bp.n);
                                gemm_blocked(&a, &b, &cfg)?
                            }
                            None => gemm_emulated(&a, &b, &cfg)?,
                        };
                        let stats = error_stats(&out.c, &exact)?;
                        write!(
                            w,
                            "{},{},{},{},{},{},{},{:e},{:e},{}",
                            dims.m,
                            dims.n,
                            dims.k,
                            phi,
                            scheme.name(),
                            mode.name(),
                            n,
                            stats.max_rel,
                            stats.median_rel,
                            args.seed,
                        )?;
                        if args.breakdown {
                            let s = &out.stats;
                            write!(
                                w,
                                ",{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                                s.quant.as_secs_f64(),
                                s.gemms.as_secs_f64(),
                                s.requant.as_secs_f64(),
                                s.dequant.as_secs_f64(),
                                s.others.as_secs_f64(),
                                s.gemm_calls,
                            )?;
                        }
                        writeln!(w)?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Throughput heatmap in TFLOP/s: one row per ops value, one column per
/// bandwidth value.
pub fn cmd_model(args: &ModelArgs, w: &mut dyn Write) -> Result<()> {
    if args.ops.is_empty() || args.bandwidth.is_empty() {
        return Err(Error::InvalidArgument("empty ops or bandwidth grid".into()));
    }
    let q = ModelQuery {
        m: args.dims.m as u64,
        n: args.dims.n as u64,
        k: args.dims.k as u64,
        n_moduli: args.n_moduli,
        scheme: args.scheme,
        mode: args.mode,
    };
    build_moduli(args.scheme, args.n_moduli)?; // validate N for the family
    write!(w, "ops")?;
    for &b in &args.bandwidth {
        write!(w, ",{b:e}")?;
    }
    writeln!(w)?;
    for &ops in &args.ops {
        write!(w, "{ops:e}")?;
        for &b in &args.bandwidth {
            let hw = HardwareProfile::new(ops, b, args.correction)?;
            let tput = models::throughput(&q, &hw)? / 1e12;
            write!(w, ",{tput:.6}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Run the invariant suite; returns true iff everything passed.
pub fn cmd_verify(deep: bool, w: &mut dyn Write) -> Result<bool> {
    let checks = verify::run_all(deep);
    let mut ok = true;
    for c in &checks {
        writeln!(
            w,
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        )?;
        ok &= c.passed;
    }
    writeln!(
        w,
        "{}/{} invariants passed",
        checks.iter().filter(|c| c.passed).count(),
        checks.len()
    )?;
    Ok(ok)
}

fn with_sink<F>(out: &Option<PathBuf>, f: F) -> Result<i32>
where
    F: FnOnce(&mut dyn Write) -> Result<i32>,
{
    match out {
        Some(path) => {
            let mut file = io::BufWriter::new(File::create(path)?);
            let code = f(&mut file)?;
            file.flush()?;
            Ok(code)
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)
        }
    }
}

/// Dispatch a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Moduli(args) => with_sink(&args.out, |w| {
            cmd_moduli(args.scheme, args.n_moduli, w)?;
            Ok(0)
        }),
        Command::Accuracy(ref args) => with_sink(&args.out, |w| {
            cmd_accuracy(args, w)?;
            Ok(0)
        }),
        Command::Model(ref args) => with_sink(&args.out, |w| {
            cmd_model(args, w)?;
            Ok(0)
        }),
        Command::Verify(args) => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            Ok(if cmd_verify(args.deep, &mut lock)? { 0 } else { 1 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn capture<F: FnOnce(&mut dyn Write)>(f: F) -> String {
        let mut buf = Vec::new();
        f(&mut buf);
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn moduli_csv_int8() {
        let out = capture(|w| cmd_moduli(Scheme::Int8, 5, w).unwrap());
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(
            lines[0],
            "index,p,square,cum_log2_P,effective_bits,matmuls_fast,matmuls_accurate"
        );
        assert!(lines[5].starts_with("5,247,0,"));
        // 5 int8 moduli -> 5 fast / 6 accurate matmuls
        assert!(lines[5].ends_with(",5,6"));
        assert!(!out.contains('\r'));
    }

    #[test]
    fn moduli_csv_effective_bits_columns() {
        let out = capture(|w| cmd_moduli(Scheme::Fp8Hybrid, 12, w).unwrap());
        let last = out.lines().last().unwrap();
        let cols: Vec<&str> = last.split(',').collect();
        let bits: f64 = cols[4].parse().unwrap();
        assert!(bits > 55.0, "{bits}");
        assert_eq!(cols[5], "36");
        assert_eq!(cols[6], "37");

        let out = capture(|w| cmd_moduli(Scheme::Fp8Karatsuba, 13, w).unwrap());
        let bits: f64 = out.lines().last().unwrap().split(',').nth(4).unwrap().parse().unwrap();
        assert!(bits > 57.5, "{bits}");
    }

    #[test]
    fn moduli_rejects_bad_count() {
        let mut buf = Vec::new();
        assert!(cmd_moduli(Scheme::Int8, 1, &mut buf).is_err());
        assert!(cmd_moduli(Scheme::Int8, 99, &mut buf).is_err());
    }

    fn small_accuracy_args() -> AccuracyArgs {
        AccuracyArgs {
            dims: vec![DimTriple { m: 8, n: 8, k: 64 }],
            phi: vec![0.0, 1.0],
            scheme: vec![Scheme::Fp8Hybrid],
            mode: vec![Mode::Fast, Mode::Accurate],
            n_moduli: vec![12],
            seed: 42,
            block: None,
            breakdown: false,
            out: None,
        }
    }

    #[test]
    fn accuracy_csv_shape_and_reproducibility() {
        let args = small_accuracy_args();
        let a = capture(|w| cmd_accuracy(&args, w).unwrap());
        let b = capture(|w| cmd_accuracy(&args, w).unwrap());
        assert_eq!(a, b, "same RunSpec must give byte-identical CSV");
        let lines: Vec<&str> = a.lines().collect();
        assert_eq!(lines.len(), 1 + 2 * 2); // header + phi x mode grid
        assert_eq!(lines[0], "m,n,k,phi,scheme,mode,N,max_rel,median_rel,seed");
        for row in &lines[1..] {
            let cols: Vec<&str> = row.split(',').collect();
            assert_eq!(cols.len(), 10);
            let max_rel: f64 = cols[7].parse().unwrap();
            let med: f64 = cols[8].parse().unwrap();
            assert!(max_rel >= med);
            assert!(max_rel < 1e-10, "{row}");
        }
    }

    #[test]
    fn accuracy_breakdown_adds_columns() {
        let mut args = small_accuracy_args();
        args.breakdown = true;
        args.phi = vec![0.5];
        args.mode = vec![Mode::Accurate];
        let out = capture(|w| cmd_accuracy(&args, w).unwrap());
        let lines: Vec<&str> = out.lines().collect();
        assert!(lines[0].ends_with("quant_s,gemms_s,requant_s,dequant_s,others_s,gemm_calls"));
        let cols: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(cols.len(), 16);
        assert_eq!(cols[15], "37"); // 3N+1 for hybrid accurate N=12
    }

    #[test]
    fn accuracy_blocked_runs() {
        let mut args = small_accuracy_args();
        args.phi = vec![0.5];
        args.block = Some(BlockPair { m: 4, n: 4 });
        let out = capture(|w| cmd_accuracy(&args, w).unwrap());
        assert_eq!(out.lines().count(), 3);
    }

    #[test]
    fn model_csv_heatmap() {
        let args = ModelArgs {
            scheme: Scheme::Int8,
            mode: Mode::Fast,
            n_moduli: 16,
            dims: DimTriple {
                m: 16384,
                n: 16384,
                k: 16384,
            },
            ops: vec![1e15, 3e15],
            bandwidth: vec![2e12, 7.7e12, 8e12],
            correction: 16.0,
            out: None,
        };
        let out = capture(|w| cmd_model(&args, w).unwrap());
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 3);
        let row: Vec<f64> = lines[2]
            .split(',')
            .skip(1)
            .map(|v| v.parse().unwrap())
            .collect();
        // printed reference point at (3e15, 7.7e12)
        assert!((row[1] - 159.523261).abs() < 1e-3, "{}", row[1]);
        // monotone along the bandwidth axis
        assert!(row[0] < row[1] && row[1] < row[2]);
        // monotone along the ops axis
        let row1: Vec<f64> = lines[1]
            .split(',')
            .skip(1)
            .map(|v| v.parse().unwrap())
            .collect();
        assert!(row1[1] < row[1]);
    }

    #[test]
    fn model_rejects_empty_grid() {
        let args = ModelArgs {
            scheme: Scheme::Int8,
            mode: Mode::Fast,
            n_moduli: 16,
            dims: DimTriple { m: 1, n: 1, k: 1 },
            ops: vec![],
            bandwidth: vec![1e12],
            correction: 1.0,
            out: None,
        };
        let mut buf = Vec::new();
        assert!(cmd_model(&args, &mut buf).is_err());
    }

    #[test]
    fn dim_triple_parsing() {
        let d: DimTriple = "64,32,512".parse().unwrap();
        assert_eq!((d.m, d.n, d.k), (64, 32, 512));
        assert!("64,32".parse::<DimTriple>().is_err());
        assert!("0,1,1".parse::<DimTriple>().is_err());
        assert!("a,b,c".parse::<DimTriple>().is_err());
        let b: BlockPair = "128,256".parse().unwrap();
        assert_eq!((b.m, b.n), (128, 256));
    }

    #[test]
    fn verify_reports_all_pass() {
        let mut buf = Vec::new();
        let ok = cmd_verify(false, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(ok, "{text}");
        assert!(!text.contains("FAIL"));
        assert!(text.contains("PASS moduli-prefixes"));
    }

    #[test]
    fn cli_parses_flags() {
        use clap::Parser;
        let cli = Cli::parse_from([
            "crtgemm",
            "accuracy",
            "--dims",
            "64,64,512",
            "--phi",
            "0,0.5,1",
            "--scheme",
            "int8,fp8-hybrid",
            "--mode",
            "fast",
            "--moduli",
            "14,15",
            "--seed",
            "7",
            "--block",
            "32,32",
        ]);
        match cli.command {
            Command::Accuracy(a) => {
                assert_eq!(a.dims.len(), 1);
                assert_eq!(a.phi, vec![0.0, 0.5, 1.0]);
                assert_eq!(a.scheme, vec![Scheme::Int8, Scheme::Fp8Hybrid]);
                assert_eq!(a.mode, vec![Mode::Fast]);
                assert_eq!(a.n_moduli, vec![14, 15]);
                assert_eq!(a.seed, 7);
                assert_eq!(a.block.unwrap().m, 32);
            }
            _ => panic!("wrong subcommand"),
        }
    }
}
