//! Command-line front end: a small line-oriented script language for
//! declaring and calling foreign functions, plus the worked demos.

pub mod demo;
pub mod script;
pub mod session;

pub use script::{check_script, parse_script, SyntaxError};
pub use session::{render, Session, SessionError};

/// Process exit code for success.
pub const EXIT_OK: i32 = 0;
/// The script or input is wrong.
pub const EXIT_SCRIPT: i32 = 1;
/// A library, compiler or call engine is missing.
pub const EXIT_ENVIRONMENT: i32 = 2;
