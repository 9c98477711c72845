//! The `demo` subcommands.

use std::io::Write;
use std::path::Path;

use ffibridge_demos::fft::{benchmark_multiply, fft_multiply_with, naive_multiply, DensePolynomial, Fftw};
use ffibridge_demos::glm::{general_linear_model, residual, GlmProblem, Matrix};
use ffibridge_demos::jit::{benchmark_fib, jit_fibonacci};
use ffibridge_demos::{Error, Result};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::Deserialize;

/// Products of degree at most this are printed in full.
const SHOW_DEGREE: usize = 4;

pub struct FftOptions {
    pub degree: usize,
    pub seed: u64,
    pub bench: bool,
    pub csv: bool,
    pub runs: usize,
}

pub fn fft(opts: &FftOptions, out: &mut impl Write) -> Result<()> {
    let engine = Fftw::shared()?;
    let mut rng = StdRng::seed_from_u64(opts.seed);
    if opts.bench {
        let mut degrees = Vec::new();
        let mut d = 16;
        while d < opts.degree {
            degrees.push(d);
            d *= 2;
        }
        degrees.push(opts.degree);
        let report = benchmark_multiply(&engine, &degrees, opts.runs, &mut rng)?;
        if opts.csv {
            write!(out, "{}", report.to_csv())?;
        } else {
            write!(out, "{report}")?;
        }
        return Ok(());
    }
    let f = DensePolynomial::random(opts.degree, &mut rng);
    let g = DensePolynomial::random(opts.degree, &mut rng);
    let fast = fft_multiply_with(&engine, &f, &g)?;
    let slow = naive_multiply(&f, &g);
    let diff = fast.coefficients().max_abs_diff(slow.coefficients());
    let relative = diff / slow.coefficients().max_norm();
    if opts.degree <= SHOW_DEGREE {
        writeln!(out, "f = {f}")?;
        writeln!(out, "g = {g}")?;
        writeln!(out, "f*g = {fast}")?;
    }
    writeln!(
        out,
        "degree {} product: max relative difference from schoolbook {relative:.3e}",
        opts.degree
    )?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GlmInput {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    d: Vec<f64>,
}

/// Reads `{"A": [[..]], "B": [[..]], "d": [..]}`.
pub fn read_glm_problem(text: &str) -> Result<GlmProblem> {
    let input: GlmInput =
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("problem file: {e}")))?;
    GlmProblem::new(
        Matrix::from_rows(&input.a)?,
        Matrix::from_rows(&input.b)?,
        input.d,
    )
}

pub fn glm(input: Option<&Path>, out: &mut impl Write) -> Result<()> {
    let problem = match input {
        Some(path) => read_glm_problem(&std::fs::read_to_string(path)?)?,
        None => GlmProblem::example(),
    };
    let solution = general_linear_model(&problem)?;
    writeln!(out, "{solution}")?;
    writeln!(
        out,
        "residual ||A x + B y - d|| = {:.3e}",
        residual(&problem, &solution)?
    )?;
    Ok(())
}

pub fn jit(n: u32, bench: bool, out: &mut impl Write) -> Result<()> {
    if bench {
        writeln!(out, "{}", benchmark_fib(n)?)?;
    } else {
        writeln!(out, "fibonacci2({n}) = {}", jit_fibonacci(n)?)?;
    }
    Ok(())
}
