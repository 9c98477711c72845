//! The general Gauss-Markov linear model solved by LAPACK's `dggglm`.
//!
//! Given `A` (n x m), `B` (n x p) and `d` (length n), find `x` and `y`
//! minimizing `||y||` subject to `d = A x + B y`.

use std::fmt;
use std::sync::OnceLock;

use ffibridge::loader::SearchPath;
use ffibridge::{ForeignFunction, HostValue, LibraryHandle, MemoryArena, TypeDescriptor};

use crate::{Error, Result};

const SYMBOLS: [&str; 2] = ["dggglm_", "dggglm"];
const LIBRARIES: [&str; 3] = ["lapack", "liblapack.so.3", "openblas"];

/// Dense row-major matrix of doubles.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch(format!(
                "row {bad} has {} entries, expected {cols}",
                rows[bad].len()
            )));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Matrix {
            rows: n,
            cols: n,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).map(<[f64]>::to_vec).collect()
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply a {}x{} matrix by a vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j) * v[j]).sum())
            .collect())
    }
}

/// Flattens `m` so entry (i, j) lands at index `j * rows + i`.
pub fn to_column_major(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.rows * m.cols);
    for j in 0..m.cols {
        for i in 0..m.rows {
            out.push(m.get(i, j));
        }
    }
    out
}

/// Inverse of [`to_column_major`].
pub fn from_column_major(values: &[f64], rows: usize, cols: usize) -> Result<Matrix> {
    if values.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "{} values cannot fill a {rows}x{cols} matrix",
            values.len()
        )));
    }
    let mut data = vec![0.0; rows * cols];
    for j in 0..cols {
        for i in 0..rows {
            data[i * cols + j] = values[j * rows + i];
        }
    }
    Ok(Matrix { rows, cols, data })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlmProblem {
    a: Matrix,
    b: Matrix,
    d: Vec<f64>,
}

impl GlmProblem {
    pub fn new(a: Matrix, b: Matrix, d: Vec<f64>) -> Result<Self> {
        if a.rows != b.rows {
            return Err(Error::DimensionMismatch(
                "expected first two arguments to have the same number of rows".into(),
            ));
        }
        if d.len() != a.rows {
            return Err(Error::DimensionMismatch(format!(
                "response has length {}, expected {}",
                d.len(),
                a.rows
            )));
        }
        if a.rows < a.cols {
            return Err(Error::DimensionMismatch(format!(
                "design matrix has more columns ({}) than rows ({})",
                a.cols, a.rows
            )));
        }
        if b.cols + a.cols < a.rows {
            return Err(Error::DimensionMismatch(format!(
                "B needs at least n - m = {} columns, has {}",
                a.rows - a.cols,
                b.cols
            )));
        }
        if a.cols == 0 || b.cols == 0 {
            return Err(Error::DimensionMismatch(
                "matrices must have at least one column".into(),
            ));
        }
        Ok(GlmProblem { a, b, d })
    }

    /// The 4 x 3 worked example with a nearly singular B.
    pub fn example() -> Self {
        let a = Matrix::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![4.0, 1.0, 2.0],
            vec![5.0, 6.0, 7.0],
            vec![3.0, 4.0, 6.0],
        ])
        .expect("rectangular");
        let b = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0, 0.0],
            vec![2.0, 3.0, 0.0, 0.0],
            vec![4.0, 5.0, 1e-5, 0.0],
            vec![7.0, 8.0, 9.0, 10.0],
        ])
        .expect("rectangular");
        GlmProblem::new(a, b, vec![1.0, 2.0, 3.0, 4.0]).expect("consistent shapes")
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    /// Row count `n`.
    pub fn n(&self) -> usize {
        self.a.rows
    }

    /// Column count of `A`.
    pub fn m(&self) -> usize {
        self.a.cols
    }

    /// Column count of `B`.
    pub fn p(&self) -> usize {
        self.b.cols
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlmSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl fmt::Display for GlmSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: &[f64]| {
            v.iter()
                .map(|&e| format_significant(e, 6))
                .collect::<Vec<_>>()
                .join(", ")
        };
        writeln!(f, "x = ({})", show(&self.x))?;
        write!(f, "y = ({})", show(&self.y))
    }
}

/// `value` rounded to `digits` significant digits, trailing zeros trimmed.
pub fn format_significant(value: f64, digits: usize) -> String {
    if value == 0.0 || !value.is_finite() {
        return HostValue::Real(value).to_string();
    }
    let rounded: f64 = format!("{:.*e}", digits - 1, value).parse().expect("float text");
    HostValue::Real(rounded).to_string()
}

/// `dggglm` resolved from a LAPACK provider.
#[derive(Clone)]
pub struct Lapack {
    dggglm: ForeignFunction,
}

impl fmt::Debug for Lapack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Lapack")
            .field("symbol", &self.dggglm.name())
            .finish()
    }
}

impl Lapack {
    /// Looks for `dggglm_` (then `dggglm`) among already loaded objects,
    /// then in a LAPACK library found through `search` or the system loader.
    pub fn open(search: &SearchPath) -> Result<Self> {
        let signature = || vec![TypeDescriptor::address(); 13];
        let global = LibraryHandle::default_namespace();
        let loaded = LIBRARIES
            .iter()
            .filter_map(|name| LibraryHandle::open_with(name, None, search).ok());
        for library in std::iter::once(global).chain(loaded) {
            for symbol in SYMBOLS {
                if library.resolve(symbol).is_ok() {
                    let dggglm =
                        ForeignFunction::new(Some(&library), symbol, TypeDescriptor::void(), signature())?;
                    return Ok(Lapack { dggglm });
                }
            }
        }
        Err(Error::EnvironmentMissing(
            "no LAPACK provider exports dggglm".into(),
        ))
    }

    /// Process-wide instance; the first lookup's outcome is kept.
    pub fn shared() -> Result<Lapack> {
        static SHARED: OnceLock<std::result::Result<Lapack, String>> = OnceLock::new();
        SHARED
            .get_or_init(|| Lapack::open(&SearchPath::from_env()).map_err(|e| e.to_string()))
            .clone()
            .map_err(Error::EnvironmentMissing)
    }

    pub fn function(&self) -> &ForeignFunction {
        &self.dggglm
    }

    pub fn solve(&self, problem: &GlmProblem) -> Result<GlmSolution> {
        let (n, m, p) = (problem.n(), problem.m(), problem.p());
        let int = |v: usize| -> Result<HostValue> {
            i32::try_from(v)
                .map(HostValue::from)
                .map_err(|_| Error::InvalidInput(format!("dimension {v} exceeds int range")))
        };
        let doubles = |len: usize| TypeDescriptor::make_array(TypeDescriptor::float64(), len);
        let arena = MemoryArena::new();
        let boxed_int = |v: usize| -> Result<_> { Ok(arena.boxed(&int(v)?, &TypeDescriptor::int32())?) };
        let boxed_reals = |values: &[f64]| -> Result<_> {
            Ok(arena.boxed(&HostValue::reals(values), &doubles(values.len())?)?)
        };

        let lwork = n + m + p;
        let (nn, mm, pp) = (boxed_int(n)?, boxed_int(m)?, boxed_int(p)?);
        // dggglm overwrites A, B and d, so each gets a fresh copy.
        let a = boxed_reals(&to_column_major(&problem.a))?;
        let lda = boxed_int(n)?;
        let b = boxed_reals(&to_column_major(&problem.b))?;
        let ldb = boxed_int(n)?;
        let d = boxed_reals(&problem.d)?;
        let x = arena.allocate(m * 8)?;
        let y = arena.allocate(p * 8)?;
        let work = arena.allocate(lwork * 8)?;
        let lw = boxed_int(lwork)?;
        let info = arena.allocate(4)?;

        self.dggglm.invoke([
            (&nn).into(),
            (&mm).into(),
            (&pp).into(),
            (&a).into(),
            (&lda).into(),
            (&b).into(),
            (&ldb).into(),
            (&d).into(),
            (&x).into(),
            (&y).into(),
            (&work).into(),
            (&lw).into(),
            ffibridge::Arg::from(&info),
        ])?;

        let status = info
            .read_at(0, &TypeDescriptor::int32())?
            .to_i64()
            .expect("int32 cell");
        if status != 0 {
            return Err(Error::SolverFailure {
                message: "call to dggglm failed".into(),
                info: status,
            });
        }
        let read = |block: &ffibridge::MemoryBlock, len: usize| -> Result<Vec<f64>> {
            let list = block.read_at(0, &doubles(len)?)?;
            Ok(list
                .as_list()
                .expect("array decodes to a list")
                .iter()
                .map(|v| v.to_f64().expect("real"))
                .collect())
        };
        Ok(GlmSolution {
            x: read(&x, m)?,
            y: read(&y, p)?,
        })
    }
}

/// Solves `problem` with the process-wide LAPACK provider.
pub fn general_linear_model(problem: &GlmProblem) -> Result<GlmSolution> {
    Lapack::shared()?.solve(problem)
}

/// `||d - A x - B y||_2`.
pub fn residual(problem: &GlmProblem, solution: &GlmSolution) -> Result<f64> {
    let ax = problem.a.mul_vec(&solution.x)?;
    let by = problem.b.mul_vec(&solution.y)?;
    Ok(problem
        .d
        .iter()
        .zip(ax.iter().zip(&by))
        .map(|(d, (ax, by))| (d - ax - by).powi(2))
        .sum::<f64>()
        .sqrt())
}
