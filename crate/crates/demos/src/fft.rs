//! Discrete Fourier transforms through FFTW and polynomial multiplication by
//! convolution.
//!
//! Transforms are unnormalized: entry `k` of the transform of `x` (length
//! `N`) is `sum_j x_j * w^(sign * j * k)` with `w = exp(2*pi*i / N)`, so a
//! forward transform followed by an inverse one multiplies by `N`.

use std::fmt;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use ffibridge::loader::SearchPath;
use ffibridge::{Arg, ForeignFunction, HostValue, LibraryHandle, MemoryArena, TypeDescriptor};
use num_complex::Complex64;
use rand::Rng;

use crate::{median, millis, Error, Result};

/// FFTW_ESTIMATE
const PLAN_FLAGS: u32 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Forward,
    Inverse,
}

impl Sign {
    pub fn value(self) -> i32 {
        match self {
            Sign::Forward => -1,
            Sign::Inverse => 1,
        }
    }

    pub fn opposite(self) -> Sign {
        match self {
            Sign::Forward => Sign::Inverse,
            Sign::Inverse => Sign::Forward,
        }
    }
}

/// A non-empty vector of complex numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexVector(Vec<Complex64>);

impl ComplexVector {
    pub fn new(entries: Vec<Complex64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidInput("complex vector must not be empty".into()));
        }
        Ok(ComplexVector(entries))
    }

    pub fn from_reals(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&r| Complex64::new(r, 0.0)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.0
    }

    pub fn into_entries(self) -> Vec<Complex64> {
        self.0
    }

    pub fn scale(&self, factor: Complex64) -> ComplexVector {
        ComplexVector(self.0.iter().map(|z| z * factor).collect())
    }

    /// Largest componentwise distance to `other`.
    pub fn max_abs_diff(&self, other: &ComplexVector) -> f64 {
        assert_eq!(self.len(), other.len());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for ComplexVector {
    type Output = Complex64;

    fn index(&self, i: usize) -> &Complex64 {
        &self.0[i]
    }
}

/// Polynomial with complex coefficients; index `k` holds the coefficient of
/// `x^k`. The degree is formal, so trailing zeros are kept.
#[derive(Clone, Debug, PartialEq)]
pub struct DensePolynomial {
    coefficients: ComplexVector,
}

impl DensePolynomial {
    pub fn new(coefficients: ComplexVector) -> Self {
        DensePolynomial { coefficients }
    }

    pub fn from_coefficients(coefficients: Vec<Complex64>) -> Result<Self> {
        Ok(Self::new(ComplexVector::new(coefficients)?))
    }

    pub fn from_reals(coefficients: &[f64]) -> Result<Self> {
        Ok(Self::new(ComplexVector::from_reals(coefficients)?))
    }

    /// Coefficients drawn uniformly from the unit square.
    pub fn random(degree: usize, rng: &mut impl Rng) -> Self {
        let coefficients = (0..=degree)
            .map(|_| Complex64::new(rng.gen(), rng.gen()))
            .collect();
        Self::new(ComplexVector(coefficients))
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn coefficients(&self) -> &ComplexVector {
        &self.coefficients
    }
}

impl fmt::Display for DensePolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (k, c) in self.coefficients.entries().iter().enumerate() {
            if *c == Complex64::new(0.0, 0.0) && self.degree() > 0 {
                continue;
            }
            if !first {
                f.write_str(" + ")?;
            }
            first = false;
            let coeff = if c.im == 0.0 {
                HostValue::Real(c.re).to_string()
            } else {
                format!("({})", HostValue::Complex { re: c.re, im: c.im })
            };
            match k {
                0 => write!(f, "{coeff}")?,
                1 => write!(f, "{coeff}*x")?,
                _ => write!(f, "{coeff}*x^{k}")?,
            }
        }
        if first {
            f.write_str("0")?;
        }
        Ok(())
    }
}

/// A transform engine: FFTW or the definitional reference.
pub trait Transform {
    fn transform(&self, x: &ComplexVector, sign: Sign) -> Result<ComplexVector>;
}

/// The O(N^2) definitional transform.
pub fn reference_dft(x: &ComplexVector, sign: Sign) -> ComplexVector {
    let n = x.len();
    let s = sign.value() as f64;
    // w^t for t in 0..n; exponents are reduced mod n before lookup
    let powers: Vec<Complex64> = (0..n)
        .map(|t| Complex64::from_polar(1.0, s * std::f64::consts::TAU * t as f64 / n as f64))
        .collect();
    let out = (0..n)
        .map(|k| {
            x.0.iter()
                .enumerate()
                .map(|(j, xj)| xj * powers[(j * k) % n])
                .sum()
        })
        .collect();
    ComplexVector(out)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ReferenceTransform;

impl Transform for ReferenceTransform {
    fn transform(&self, x: &ComplexVector, sign: Sign) -> Result<ComplexVector> {
        Ok(reference_dft(x, sign))
    }
}

/// FFTW's complex one-dimensional transform, called through the FFI.
#[derive(Clone)]
pub struct Fftw {
    library: LibraryHandle,
    plan_dft_1d: ForeignFunction,
    execute: ForeignFunction,
    destroy_plan: ForeignFunction,
}

impl fmt::Debug for Fftw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fftw")
            .field("library", &self.library.source())
            .finish()
    }
}

// The FFTW planner is not thread-safe; plan creation and destruction are
// serialized process-wide.
static PLANNER: Mutex<()> = Mutex::new(());

impl Fftw {
    /// Opens `fftw3` through `search`, then the system loader.
    pub fn open(search: &SearchPath) -> Result<Self> {
        let library = ["fftw3", "libfftw3.so.3"]
            .iter()
            .find_map(|name| LibraryHandle::open_with(name, None, search).ok())
            .ok_or_else(|| Error::EnvironmentMissing("FFTW (libfftw3) not found".into()))?;
        let ptr = TypeDescriptor::address;
        let plan_dft_1d = ForeignFunction::new(
            Some(&library),
            "fftw_plan_dft_1d",
            ptr(),
            [
                TypeDescriptor::int32(),
                ptr(),
                ptr(),
                TypeDescriptor::int32(),
                TypeDescriptor::uint32(),
            ],
        )?;
        let execute = ForeignFunction::new(Some(&library), "fftw_execute", TypeDescriptor::void(), ptr())?;
        let destroy_plan =
            ForeignFunction::new(Some(&library), "fftw_destroy_plan", TypeDescriptor::void(), ptr())?;
        Ok(Fftw {
            library,
            plan_dft_1d,
            execute,
            destroy_plan,
        })
    }

    /// Process-wide instance found through `FFI_LIBRARY_PATH` and the system
    /// loader. The outcome of the first lookup is kept.
    pub fn shared() -> Result<Fftw> {
        static SHARED: OnceLock<std::result::Result<Fftw, String>> = OnceLock::new();
        SHARED
            .get_or_init(|| Fftw::open(&SearchPath::from_env()).map_err(|e| e.to_string()))
            .clone()
            .map_err(Error::EnvironmentMissing)
    }

    pub fn library(&self) -> &LibraryHandle {
        &self.library
    }
}

impl Transform for Fftw {
    fn transform(&self, x: &ComplexVector, sign: Sign) -> Result<ComplexVector> {
        let n = x.len();
        let doubles = TypeDescriptor::make_array(TypeDescriptor::float64(), 2 * n)?;
        let arena = MemoryArena::new();
        let input = arena.allocate(doubles.size())?;
        let output = arena.allocate(doubles.size())?;
        let length = i32::try_from(n)
            .map_err(|_| Error::InvalidInput(format!("transform length {n} exceeds int range")))?;

        let plan = {
            let _guard = PLANNER.lock().unwrap_or_else(|e| e.into_inner());
            self.plan_dft_1d.invoke([
                Arg::from(length),
                Arg::from(&input),
                Arg::from(&output),
                Arg::from(sign.value()),
                Arg::from(PLAN_FLAGS),
            ])?
        };
        let plan = match plan.as_address() {
            Some(a) if !a.is_null() => a,
            _ => return Err(Error::PlanFailed(n)),
        };
        let handle = arena.adopt_handle(plan)?;
        let destroy = self.destroy_plan.clone();
        handle.register_cleanup(move || {
            let _guard = PLANNER.lock().unwrap_or_else(|e| e.into_inner());
            let _ = destroy.invoke([plan]);
        })?;

        // Planning in estimate mode leaves the arrays alone, so the input
        // can be written after the plan exists.
        let interleaved: Vec<f64> = x.0.iter().flat_map(|z| [z.re, z.im]).collect();
        input.write_at(0, &doubles, &HostValue::reals(&interleaved))?;
        self.execute.invoke([plan])?;
        let result = output.read_at(0, &doubles)?;
        arena.release();

        let values = result.as_list().expect("array decodes to a list");
        let entries = values
            .chunks_exact(2)
            .map(|pair| Complex64::new(pair[0].to_f64().expect("real"), pair[1].to_f64().expect("real")))
            .collect();
        Ok(ComplexVector(entries))
    }
}

/// Transform through the process-wide FFTW instance.
pub fn fast_transform(x: &ComplexVector, sign: Sign) -> Result<ComplexVector> {
    Fftw::shared()?.transform(x, sign)
}

/// Product by convolution: zero-pad both coefficient lists to length
/// `m + n + 1`, transform, multiply pointwise, transform back and divide by
/// the length.
pub fn fft_multiply_with(
    engine: &dyn Transform,
    f: &DensePolynomial,
    g: &DensePolynomial,
) -> Result<DensePolynomial> {
    let (m, n) = (f.degree(), g.degree());
    let len = m + n + 1;
    let pad = |p: &DensePolynomial| {
        let mut c = p.coefficients.0.clone();
        c.resize(len, Complex64::new(0.0, 0.0));
        ComplexVector(c)
    };
    let a = engine.transform(&pad(f), Sign::Forward)?;
    let b = engine.transform(&pad(g), Sign::Forward)?;
    let c = ComplexVector(a.0.iter().zip(&b.0).map(|(x, y)| x * y).collect());
    let c = engine.transform(&c, Sign::Inverse)?;
    Ok(DensePolynomial::new(
        c.scale(Complex64::new(1.0 / len as f64, 0.0)),
    ))
}

/// [`fft_multiply_with`] using FFTW.
pub fn fft_multiply(f: &DensePolynomial, g: &DensePolynomial) -> Result<DensePolynomial> {
    fft_multiply_with(&Fftw::shared()?, f, g)
}

/// Schoolbook product.
pub fn naive_multiply(f: &DensePolynomial, g: &DensePolynomial) -> DensePolynomial {
    let (a, b) = (f.coefficients.entries(), g.coefficients.entries());
    let mut c = vec![Complex64::new(0.0, 0.0); a.len() + b.len() - 1];
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            c[i + j] += ai * bj;
        }
    }
    DensePolynomial::new(ComplexVector(c))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchmarkRow {
    pub degree: usize,
    pub naive_ms: f64,
    pub fft_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub runs: usize,
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("degree,naive_ms,fft_ms\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:.6},{:.6}\n", r.degree, r.naive_ms, r.fft_ms));
        }
        out
    }
}

impl fmt::Display for BenchmarkReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "median of {} runs", self.runs)?;
        writeln!(
            f,
            "{:>8}  {:>12}  {:>12}  {:>8}",
            "degree", "naive (ms)", "fft (ms)", "ratio"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>8}  {:>12.3}  {:>12.3}  {:>8.2}",
                r.degree,
                r.naive_ms,
                r.fft_ms,
                r.naive_ms / r.fft_ms
            )?;
        }
        Ok(())
    }
}

/// Median wall times of the naive and convolution products of two random
/// polynomials of each degree. `runs` is raised to at least 5.
pub fn benchmark_multiply(
    engine: &dyn Transform,
    degrees: &[usize],
    runs: usize,
    rng: &mut impl Rng,
) -> Result<BenchmarkReport> {
    let runs = runs.max(5);
    let mut rows = Vec::with_capacity(degrees.len());
    for &degree in degrees {
        let f = DensePolynomial::random(degree, rng);
        let g = DensePolynomial::random(degree, rng);
        let mut naive = Vec::with_capacity(runs);
        let mut fast = Vec::with_capacity(runs);
        for _ in 0..runs {
            let start = Instant::now();
            std::hint::black_box(naive_multiply(&f, &g));
            naive.push(start.elapsed());
            let start = Instant::now();
            std::hint::black_box(fft_multiply_with(engine, &f, &g)?);
            fast.push(start.elapsed());
        }
        rows.push(BenchmarkRow {
            degree,
            naive_ms: millis(median(naive)),
            fft_ms: millis(median(fast)),
        });
    }
    Ok(BenchmarkReport { runs, rows })
}
