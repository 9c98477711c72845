//! Run-time foreign function interface.
//!
//! Open shared libraries with [`LibraryHandle`], describe C types with
//! [`TypeDescriptor`], move values across the boundary with the [`codec`],
//! own foreign memory through a [`MemoryArena`], and call functions through
//! [`ForeignFunction`].
//!
//! ```no_run
//! use ffibridge::{ForeignFunction, TypeDescriptor};
//!
//! let puts = ForeignFunction::new(None, "puts", TypeDescriptor::int32(), TypeDescriptor::cstring())?;
//! let written = puts.invoke(["Hello, world!"])?;
//! # Ok::<(), ffibridge::Error>(())
//! ```

pub mod call;
pub mod codec;
mod error;
pub mod loader;
pub mod memory;
pub mod types;

pub use call::{Arg, CallEngine, ForeignFunction, Params};
pub use codec::{format_real, ForeignValue, HostValue};
pub use error::{Error, Result};
pub use loader::{LibraryHandle, SearchPath};
pub use memory::{Address, ForeignHandle, MemoryArena, MemoryBlock};
pub use types::{parse_type, Kind, Scalar, TypeDescriptor};
