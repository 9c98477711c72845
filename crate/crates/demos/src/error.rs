use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("required library is unavailable: {0}")]
    EnvironmentMissing(String),

    #[error("fftw_plan_dft_1d returned a null plan for length {0}")]
    PlanFailed(usize),

    #[error("{0}")]
    DimensionMismatch(String),

    #[error("{message} (info = {info})")]
    SolverFailure { message: String, info: i64 },

    #[error("C compiler `{0}` not found")]
    CompilerMissing(String),

    #[error("compiling {source_path} failed:\n{stderr}")]
    CompileFailed { source_path: PathBuf, stderr: String },

    #[error("fibonacci({0}) does not fit in a 32-bit int; the largest supported n is 46")]
    RangeRefused(u32),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Ffi(#[from] ffibridge::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the host environment (missing library or
    /// compiler) rather than by the input.
    pub fn is_environmental(&self) -> bool {
        matches!(self, Error::EnvironmentMissing(_) | Error::CompilerMissing(_))
    }
}
