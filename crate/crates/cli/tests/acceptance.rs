//! Acceptance suite. Prints one line per criterion: PASS, FAIL with the
//! reason, or SKIP when a required library or compiler is missing.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use ffibridge::codec::encode;
use ffibridge::{Address, ForeignFunction, HostValue, MemoryArena, TypeDescriptor};
use ffibridge_demos::fft::{
    benchmark_multiply, fft_multiply_with, naive_multiply, reference_dft, ComplexVector, DensePolynomial,
    Fftw, Sign, Transform,
};
use ffibridge_demos::glm::{GlmProblem, GlmSolution, Lapack, Matrix};
use ffibridge_demos::jit::{benchmark_fib, host_fibonacci, iterative_fibonacci, jit_compile, jit_fibonacci};
use ffibridge_demos::Error as DemoError;
use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

enum Outcome {
    Pass(String),
    Skip(String),
}

type Check = Result<Outcome, String>;

type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pass(detail: impl Into<String>) -> Check {
    Ok(Outcome::Pass(detail.into()))
}

fn hello_world_reproduction() -> Check {
    let arena = MemoryArena::new();
    let five = encode(&HostValue::from(5), &TypeDescriptor::int32(), &arena).map_err(|e| e.to_string())?;
    let back = five.decode().map_err(|e| e.to_string())?;
    ensure(back == HostValue::from(5), || {
        format!("int32 5 decoded as {back}")
    })?;

    let pi = encode(
        &HostValue::Real(std::f64::consts::PI),
        &TypeDescriptor::float64(),
        &arena,
    )
    .map_err(|e| e.to_string())?;
    let shown = pi.decode().map_err(|e| e.to_string())?.to_string();
    ensure(shown == "3.14159265358979", || format!("pi printed as {shown}"))?;

    let text = HostValue::text("Hello, world!");
    let c = encode(&text, &TypeDescriptor::cstring(), &arena).map_err(|e| e.to_string())?;
    let back = c.decode().map_err(|e| e.to_string())?;
    ensure(back == text, || format!("cstring decoded as {back}"))?;

    let puts = ForeignFunction::new(None, "puts", TypeDescriptor::int32(), TypeDescriptor::cstring())
        .map_err(|e| e.to_string())?;
    let written = puts.invoke(["Hello, world!"]).map_err(|e| e.to_string())?;
    unsafe { libc_fflush() };
    let written = written.to_i64().ok_or("puts returned a non-integer")?;
    if cfg!(target_env = "gnu") {
        ensure(written == 14, || {
            format!("puts returned {written} on glibc, expected 14")
        })?;
    } else {
        ensure(written >= 13, || {
            format!("puts returned {written}, expected >= 13")
        })?;
    }
    pass(format!("puts returned {written}"))
}

extern "C" {
    fn fflush(stream: *mut std::ffi::c_void) -> i32;
}

unsafe fn libc_fflush() {
    fflush(std::ptr::null_mut());
}

const CASES: usize = 1000;

fn roundtrip(value: &HostValue, ty: &TypeDescriptor) -> Result<HostValue, String> {
    let arena = MemoryArena::new();
    encode(value, ty, &arena)
        .and_then(|fv| fv.decode())
        .map_err(|e| format!("{ty} {value}: {e}"))
}

fn codec_suite() -> Check {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(100);
    let ints: [(TypeDescriptor, i128, i128); 8] = [
        (TypeDescriptor::int8(), i8::MIN.into(), i8::MAX.into()),
        (TypeDescriptor::uint8(), 0, u8::MAX.into()),
        (TypeDescriptor::int16(), i16::MIN.into(), i16::MAX.into()),
        (TypeDescriptor::uint16(), 0, u16::MAX.into()),
        (TypeDescriptor::int32(), i32::MIN.into(), i32::MAX.into()),
        (TypeDescriptor::uint32(), 0, u32::MAX.into()),
        (TypeDescriptor::int64(), i64::MIN.into(), i64::MAX.into()),
        (TypeDescriptor::uint64(), 0, u64::MAX.into()),
    ];
    let mut count = 0;
    for (ty, lo, hi) in &ints {
        for i in 0..CASES {
            let x = match i {
                0 => *lo,
                1 => *hi,
                _ => rng.gen_range(*lo..=*hi),
            };
            let v = HostValue::Integer(BigInt::from(x));
            let back = roundtrip(&v, ty)?;
            ensure(back == v, || format!("{ty}: {x} came back as {back}"))?;
            count += 1;
        }
        for x in [
            lo - 1,
            hi + 1,
            lo - rng.gen_range(1..i128::from(u32::MAX)),
            hi + rng.gen_range(1..i128::from(u32::MAX)),
        ] {
            let arena = MemoryArena::new();
            let r = encode(&HostValue::Integer(BigInt::from(x)), ty, &arena);
            ensure(r.is_err(), || format!("{ty}: out-of-range {x} was accepted"))?;
        }
    }
    for _ in 0..CASES {
        let x = f64::from_bits(rng.gen());
        let back = roundtrip(&HostValue::Real(x), &TypeDescriptor::float64())?;
        let bits = back.to_f64().ok_or("float64 decoded to a non-real")?.to_bits();
        ensure(bits == x.to_bits(), || format!("float64 {x:e} changed bits"))?;

        let y = loop {
            let y = f32::from_bits(rng.gen());
            if !y.is_nan() {
                break y;
            }
        };
        let back = roundtrip(&HostValue::Real(y.into()), &TypeDescriptor::float32())?;
        let back = back.to_f64().ok_or("float32 decoded to a non-real")? as f32;
        ensure(back.to_bits() == y.to_bits(), || {
            format!("float32 {y:e} changed bits")
        })?;

        let a = HostValue::Address(Address::new(rng.gen_range(1..usize::MAX)));
        ensure(roundtrip(&a, &TypeDescriptor::address())? == a, || {
            "address changed".into()
        })?;

        let len = rng.gen_range(0..64);
        let s = HostValue::Text((0..len).map(|_| rng.gen_range(1u8..=255)).collect());
        ensure(roundtrip(&s, &TypeDescriptor::cstring())? == s, || {
            "cstring changed".into()
        })?;
        count += 4;
    }
    let arena = MemoryArena::new();
    ensure(
        encode(&HostValue::Real(1e39), &TypeDescriptor::float32(), &arena).is_err(),
        || "float32 overflow was accepted".into(),
    )?;
    ensure(
        encode(&HostValue::text("a\0b"), &TypeDescriptor::cstring(), &arena).is_err(),
        || "interior NUL was accepted".into(),
    )?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    pass(format!("{count} roundtrips in {:.2} s", elapsed.as_secs_f64()))
}

fn random_vector(rng: &mut StdRng, n: usize) -> ComplexVector {
    ComplexVector::new(
        (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect(),
    )
    .expect("non-empty")
}

/// The defining sum with a fresh angle for every term.
fn brute_force_dft(x: &[Complex64], sign: f64) -> Vec<Complex64> {
    let n = x.len() as f64;
    (0..x.len())
        .map(|k| {
            x.iter()
                .enumerate()
                .fold(Complex64::new(0.0, 0.0), |acc, (j, xj)| {
                    let angle = sign * 2.0 * std::f64::consts::PI * (j * k) as f64 / n;
                    acc + xj * Complex64::from_polar(1.0, angle)
                })
        })
        .collect()
}

fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn dft_equivalence() -> Check {
    let mut rng = StdRng::seed_from_u64(200);
    for n in 1..=64 {
        let x = random_vector(&mut rng, n);
        let diff = max_diff(
            reference_dft(&x, Sign::Forward).entries(),
            &brute_force_dft(x.entries(), -1.0),
        );
        ensure(diff < 1e-9 * n as f64, || {
            format!("reference vs defining sum at n = {n}: {diff:e}")
        })?;
    }
    let fftw = match Fftw::shared() {
        Ok(f) => f,
        Err(e) => {
            return Ok(Outcome::Skip(format!(
                "reference subset passed; FFTW unavailable: {e}"
            )))
        }
    };
    let mut worst = 0.0f64;
    for n in 1..=256 {
        let x = random_vector(&mut rng, n);
        for sign in [Sign::Forward, Sign::Inverse] {
            let fast = fftw.transform(&x, sign).map_err(|e| e.to_string())?;
            let diff = fast.max_abs_diff(&reference_dft(&x, sign));
            ensure(diff < 1e-9 * n as f64, || format!("n = {n}: {diff:e}"))?;
            worst = worst.max(diff / n as f64);
        }
        let back = fftw
            .transform(
                &fftw.transform(&x, Sign::Forward).map_err(|e| e.to_string())?,
                Sign::Inverse,
            )
            .map_err(|e| e.to_string())?;
        let scaled = x.scale(Complex64::new(n as f64, 0.0));
        let rel = back.max_abs_diff(&scaled) / scaled.max_norm();
        ensure(rel < 1e-8, || format!("roundtrip at n = {n}: relative {rel:e}"))?;
    }
    pass(format!("lengths 1-256, worst error/n {worst:.1e}"))
}

fn multiply_equivalence() -> Check {
    let start = Instant::now();
    let fftw = match Fftw::shared() {
        Ok(f) => f,
        Err(e) => return Ok(Outcome::Skip(format!("FFTW unavailable: {e}"))),
    };
    let mut rng = StdRng::seed_from_u64(300);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let f = DensePolynomial::random(rng.gen_range(0..=200), &mut rng);
        let g = DensePolynomial::random(rng.gen_range(0..=200), &mut rng);
        let fast = fft_multiply_with(&fftw, &f, &g).map_err(|e| e.to_string())?;
        let slow = naive_multiply(&f, &g);
        ensure(fast.degree() == slow.degree(), || "degree mismatch".into())?;
        for (a, b) in fast
            .coefficients()
            .entries()
            .iter()
            .zip(slow.coefficients().entries())
        {
            let rel = (a - b).norm() / b.norm();
            worst = worst.max(rel);
            ensure(rel < 1e-6, || format!("coefficient {b} computed as {a}"))?;
        }
    }
    let one_plus_x = DensePolynomial::from_reals(&[1.0, 1.0]).map_err(|e| e.to_string())?;
    let square = fft_multiply_with(&fftw, &one_plus_x, &one_plus_x).map_err(|e| e.to_string())?;
    let expected = ComplexVector::from_reals(&[1.0, 2.0, 1.0]).map_err(|e| e.to_string())?;
    let diff = square.coefficients().max_abs_diff(&expected);
    ensure(diff < 1e-10, || format!("(1+x)^2 off by {diff:e}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    pass(format!(
        "worst relative error {worst:.1e}, (1+x)^2 within {diff:.1e}"
    ))
}

fn benchmark_ordering() -> Check {
    let fftw = match Fftw::shared() {
        Ok(f) => f,
        Err(e) => return Ok(Outcome::Skip(format!("FFTW unavailable: {e}"))),
    };
    let mut rng = StdRng::seed_from_u64(400);
    let report = benchmark_multiply(&fftw, &[6000], 5, &mut rng).map_err(|e| e.to_string())?;
    let row = report.rows[0];
    ensure(row.fft_ms <= 2.0 * row.naive_ms, || {
        format!("fft {:.1} ms vs naive {:.1} ms", row.fft_ms, row.naive_ms)
    })?;
    pass(format!(
        "degree 6000: naive {:.1} ms, fft {:.2} ms",
        row.naive_ms, row.fft_ms
    ))
}

fn lapack() -> Result<Lapack, Outcome> {
    Lapack::shared().map_err(|e| Outcome::Skip(format!("LAPACK unavailable: {e}")))
}

fn glm_golden() -> Check {
    let lapack = match lapack() {
        Ok(l) => l,
        Err(skip) => return Ok(skip),
    };
    let a = [[1.0, 2.0, 3.0], [4.0, 1.0, 2.0], [5.0, 6.0, 7.0], [3.0, 4.0, 6.0]];
    let b = [
        [1.0, 0.0, 0.0, 0.0],
        [2.0, 3.0, 0.0, 0.0],
        [4.0, 5.0, 1e-5, 0.0],
        [7.0, 8.0, 9.0, 10.0],
    ];
    let d = [1.0, 2.0, 3.0, 4.0];
    let problem = GlmProblem::new(
        Matrix::from_rows(&a.map(Vec::from)).map_err(|e| e.to_string())?,
        Matrix::from_rows(&b.map(Vec::from)).map_err(|e| e.to_string())?,
        d.to_vec(),
    )
    .map_err(|e| e.to_string())?;
    let s = lapack.solve(&problem).map_err(|e| e.to_string())?;
    let want_x = [0.3141, -0.334417, 0.441691];
    let want_y = [0.0296627, 0.0451036, 0.0585128, 0.0650142];
    ensure(s.x.len() == 3 && s.y.len() == 4, || format!("shape {s}"))?;
    for (g, w) in s.x.iter().zip(&want_x).chain(s.y.iter().zip(&want_y)) {
        ensure((g - w).abs() < 1e-4, || format!("got {s}"))?;
    }
    let r: f64 = (0..4)
        .map(|i| {
            let ax: f64 = (0..3).map(|j| a[i][j] * s.x[j]).sum();
            let by: f64 = (0..4).map(|j| b[i][j] * s.y[j]).sum();
            (d[i] - ax - by).powi(2)
        })
        .sum::<f64>()
        .sqrt();
    ensure(r < 1e-6, || format!("residual {r:e}"))?;
    pass(format!("residual {r:.1e}"))
}

/// Minimizes ||y|| subject to A x + B y = d through the stationarity
/// conditions: y = B^T l, [B B^T  A; A^T  0] [l; x] = [d; 0].
fn kkt_oracle(problem: &GlmProblem) -> GlmSolution {
    let (n, m) = (problem.n(), problem.m());
    let a = DMatrix::from_fn(n, m, |i, j| problem.a().get(i, j));
    let b = DMatrix::from_fn(n, problem.p(), |i, j| problem.b().get(i, j));
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(&(&b * b.transpose()));
    k.view_mut((0, n), (n, m)).copy_from(&a);
    k.view_mut((n, 0), (m, n)).copy_from(&a.transpose());
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n)
        .copy_from(&DVector::from_column_slice(problem.d()));
    let sol = k.lu().solve(&rhs).expect("nonsingular system");
    let lambda = sol.rows(0, n).into_owned();
    GlmSolution {
        x: sol.rows(n, m).iter().copied().collect(),
        y: (b.transpose() * lambda).iter().copied().collect(),
    }
}

fn random_problem(rng: &mut StdRng) -> GlmProblem {
    let n = rng.gen_range(1..=8);
    let m = rng.gen_range(1..=n);
    let p = rng.gen_range((n - m).max(1)..=n);
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut b: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    for (i, row) in a.iter_mut().enumerate().take(m) {
        row[i] += 3.0;
    }
    for j in 0..p {
        b[n - p + j][j] += 3.0;
    }
    let d = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
    GlmProblem::new(Matrix::from_rows(&a).unwrap(), Matrix::from_rows(&b).unwrap(), d).unwrap()
}

fn glm_oracle() -> Check {
    let lapack = match lapack() {
        Ok(l) => l,
        Err(skip) => return Ok(skip),
    };
    let mut rng = StdRng::seed_from_u64(500);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let problem = random_problem(&mut rng);
        let got = lapack.solve(&problem).map_err(|e| e.to_string())?;
        let want = kkt_oracle(&problem);
        for (g, w) in got.x.iter().zip(&want.x).chain(got.y.iter().zip(&want.y)) {
            worst = worst.max((g - w).abs());
            ensure((g - w).abs() < 1e-8, || format!("{got}\nvs oracle\n{want}"))?;
        }
    }
    pass(format!("20 instances, worst difference {worst:.1e}"))
}

fn jit_golden() -> Check {
    let start = Instant::now();
    let artifact = match jit_compile() {
        Ok(a) => a,
        Err(e @ DemoError::CompilerMissing(_)) => return Ok(Outcome::Skip(e.to_string())),
        Err(e) => return Err(e.to_string()),
    };
    let value = artifact.call(35).map_err(|e| e.to_string())?;
    let end_to_end = start.elapsed();
    artifact.teardown().map_err(|e| e.to_string())?;
    ensure(value == 9227465, || format!("fibonacci2(35) = {value}"))?;
    ensure(end_to_end < Duration::from_secs(60), || {
        format!("end to end {end_to_end:?}")
    })?;
    ensure(jit_fibonacci(35).map_err(|e| e.to_string())? == 9227465, || {
        "cached path disagrees".into()
    })?;
    for n in 0..=30 {
        let jit = BigInt::from(jit_fibonacci(n).map_err(|e| e.to_string())?);
        let host = host_fibonacci(n);
        ensure(jit == host && host == iterative_fibonacci(n), || {
            format!("n = {n}: jit {jit}, host {host}")
        })?;
    }
    let bench = benchmark_fib(35).map_err(|e| e.to_string())?;
    ensure(
        bench.host_value == BigInt::from(9227465) && bench.jit_value == 9227465,
        || format!("benchmark values {} / {}", bench.host_value, bench.jit_value),
    )?;
    let speedup = bench.speedup();
    ensure(speedup >= 10.0, || format!("speedup {speedup:.1}x"))?;
    pass(format!(
        "end to end {:.0} ms, host {:.0} ms, speedup {speedup:.1}x",
        end_to_end.as_secs_f64() * 1e3,
        bench.host_time.as_secs_f64() * 1e3
    ))
}

const PUTS_SCRIPT: &str = r#"# Write a greeting through the C library.
defn puts = fn("puts") i32(cstr)
set greeting = cstr("Hello, world!")
call written = puts(greeting)
print written
"#;

const TYPES_SCRIPT: &str = r#"deftype point = {x:f64, y:f64}
deftype tagged = {tag:u8, value:union{i:i32, d:f64}}
deftype polygon = {count:i32, corners:[4 x point]}
print sizeof(point)
print sizeof(tagged)
print sizeof(polygon)
set origin = point({x: 0, y: 0})
alloc shape = polygon
set pi = f64(3.141592653589793)
set n = i32(5)
"#;

fn cli_transcripts() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    for (name, script) in [("puts.ffi", PUTS_SCRIPT), ("types.ffi", TYPES_SCRIPT)] {
        let path = dir.path().join(name);
        std::fs::write(&path, script).map_err(|e| e.to_string())?;
        let run = || {
            Command::new(env!("CARGO_BIN_EXE_ffibridge"))
                .arg("run")
                .arg(&path)
                .output()
                .map_err(|e| e.to_string())
        };
        let (first, second) = (run()?, run()?);
        ensure(first.status.success(), || {
            format!("{name} failed: {}", String::from_utf8_lossy(&first.stderr))
        })?;
        ensure(
            first.stdout == second.stdout && first.stderr == second.stderr,
            || format!("{name} transcripts differ"),
        )?;
        summary.push(format!("{name} {} bytes", first.stdout.len()));
    }
    pass(summary.join(", "))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("hello-world reproduction", hello_world_reproduction),
        ("codec property suite", codec_suite),
        ("DFT oracle equivalence", dft_equivalence),
        ("fft multiply vs naive", multiply_equivalence),
        ("benchmark ordering at degree 6000", benchmark_ordering),
        ("GLM golden", glm_golden),
        ("GLM oracle", glm_oracle),
        ("JIT golden", jit_golden),
        ("CLI golden transcripts", cli_transcripts),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            Err(panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(Outcome::Pass(detail)) => println!("PASS {name}: {detail}"),
            Ok(Outcome::Skip(reason)) => println!("SKIP {name}: {reason}"),
            Err(reason) => {
                failures += 1;
                println!("FAIL {name}: {reason}");
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
