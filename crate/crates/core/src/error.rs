use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid type: {0}")]
    InvalidType(String),
    #[error("type syntax error at column {column}: {message}")]
    TypeSyntax { message: String, column: usize },

    #[error("integer {value} out of range for {ty}")]
    IntegerOutOfRange { value: String, ty: String },
    #[error("real {value} out of range for {ty}")]
    RealOutOfRange { value: f64, ty: String },
    #[error("cannot encode {value} as {ty}")]
    TypeMismatch { value: String, ty: String },
    #[error("expected {expected} elements for {ty}, got {actual}")]
    LengthMismatch {
        expected: usize,
        actual: usize,
        ty: String,
    },
    #[error("unknown field `{field}` for {ty}")]
    UnknownField { field: String, ty: String },
    #[error("missing field `{field}` for {ty}")]
    MissingField { field: String, ty: String },
    #[error("union {ty} needs exactly one member, got {given}")]
    UnionMemberCount { given: usize, ty: String },
    #[error("union {0} can only be decoded through a named member")]
    UnionNeedsMember(String),
    #[error("string contains an interior NUL byte at index {0}")]
    InteriorNul(usize),
    #[error("cstring cell holds a null address")]
    NullAddress,

    #[error("allocation of {0} bytes failed")]
    AllocationFailed(usize),
    #[error("cannot allocate an empty block")]
    ZeroSizedAllocation,
    #[error("access of {size} bytes at offset {offset} exceeds block of {length} bytes")]
    OutOfBounds {
        offset: usize,
        size: usize,
        length: usize,
    },
    #[error("use of released memory")]
    UseAfterRelease,
    #[error("{0} has already been released")]
    AlreadyReleased(String),

    #[error("library `{name}` not found (tried: {})", display_paths(.tried))]
    NotFound { name: String, tried: Vec<PathBuf> },
    #[error("failed to load `{path}`: {message}")]
    LoaderError { path: PathBuf, message: String },
    #[error("symbol `{symbol}` not found in {library}")]
    SymbolNotFound { library: String, symbol: String },
    #[error("library `{0}` is closed")]
    HandleClosed(String),

    #[error("unsupported type for foreign call: {0}")]
    UnsupportedType(String),
    #[error("`{function}` expects {expected} arguments, got {actual}")]
    ArityMismatch {
        function: String,
        expected: usize,
        actual: usize,
    },
    #[error("argument {index}: {source}")]
    Argument {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("call engine unavailable: {0}")]
    EngineUnavailable(String),
}

fn display_paths(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}
