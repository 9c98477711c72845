//! Typed foreign-function handles: argument marshalling, dispatch through the
//! platform calling convention, and result decoding.
//!
//! Parameters and results are limited to scalars, addresses and C strings;
//! composites travel by address, as in C. Variadic functions are not
//! supported and must not be called through this module. Concurrent calls
//! are only as safe as the foreign function itself; no locking is added.

mod direct;
mod libffi;

use std::ffi::c_void;
use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;

use crate::codec::{self, ForeignValue, HostValue};
use crate::error::{Error, Result};
use crate::loader::LibraryHandle;
use crate::memory::{Address, MemoryArena, MemoryBlock};
use crate::types::{Scalar, TypeDescriptor};

/// Dispatch backend used to perform calls.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CallEngine {
    /// The system libffi, loaded at run time.
    Libffi,
    /// Built-in System V AMD64 dispatch for scalar signatures.
    Direct,
}

impl CallEngine {
    pub fn is_available(self) -> bool {
        match self {
            CallEngine::Libffi => libffi::available(),
            CallEngine::Direct => direct::SUPPORTED,
        }
    }

    /// libffi when it can be loaded, otherwise the direct engine.
    pub fn preferred() -> Result<CallEngine> {
        [CallEngine::Libffi, CallEngine::Direct]
            .into_iter()
            .find(|e| e.is_available())
            .ok_or_else(|| {
                Error::EngineUnavailable("libffi not found and no built-in engine for this target".into())
            })
    }
}

/// Parameter list of a foreign function; a single type converts into a
/// one-element list.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params(pub Vec<TypeDescriptor>);

impl From<TypeDescriptor> for Params {
    fn from(t: TypeDescriptor) -> Self {
        Params(vec![t])
    }
}

impl From<Vec<TypeDescriptor>> for Params {
    fn from(v: Vec<TypeDescriptor>) -> Self {
        Params(v)
    }
}

impl<const N: usize> From<[TypeDescriptor; N]> for Params {
    fn from(v: [TypeDescriptor; N]) -> Self {
        Params(v.into())
    }
}

/// One argument to [`ForeignFunction::invoke`].
#[derive(Clone, Debug)]
pub enum Arg {
    /// Encoded into per-call scratch memory.
    Host(HostValue),
    /// Passed by value when its type matches the parameter, or by address
    /// to an address-typed parameter.
    Foreign(ForeignValue),
    /// Its base address, for address-typed parameters.
    Block(MemoryBlock),
}

impl<T: Into<HostValue>> From<T> for Arg {
    fn from(v: T) -> Self {
        Arg::Host(v.into())
    }
}

impl From<ForeignValue> for Arg {
    fn from(v: ForeignValue) -> Self {
        Arg::Foreign(v)
    }
}

impl From<&ForeignValue> for Arg {
    fn from(v: &ForeignValue) -> Self {
        Arg::Foreign(v.clone())
    }
}

impl From<MemoryBlock> for Arg {
    fn from(b: MemoryBlock) -> Self {
        Arg::Block(b)
    }
}

impl From<&MemoryBlock> for Arg {
    fn from(b: &MemoryBlock) -> Self {
        Arg::Block(b.clone())
    }
}

enum Plan {
    Libffi(libffi::PreparedCif),
    Direct(direct::DirectPlan),
}

struct Inner {
    name: String,
    target: Address,
    ret: TypeDescriptor,
    params: Vec<TypeDescriptor>,
    library: Option<LibraryHandle>,
    engine: CallEngine,
    plan: Plan,
}

/// A resolved symbol with a prepared call interface.
#[derive(Clone)]
pub struct ForeignFunction(Arc<Inner>);

impl fmt::Debug for ForeignFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ForeignFunction")
            .field("name", &self.0.name)
            .field("signature", &self.signature())
            .field("engine", &self.0.engine)
            .finish()
    }
}

impl fmt::Display for ForeignFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.name)
    }
}

fn passing_class(ty: &TypeDescriptor, role: &str) -> Result<Scalar> {
    ty.as_scalar().ok_or_else(|| {
        Error::UnsupportedType(format!(
            "{role} of type {ty} (composites must be passed by address)"
        ))
    })
}

impl ForeignFunction {
    /// Resolves `symbol` in `library` (or the process namespace) and prepares
    /// a call interface with the preferred engine.
    pub fn new(
        library: Option<&LibraryHandle>,
        symbol: &str,
        ret: TypeDescriptor,
        params: impl Into<Params>,
    ) -> Result<Self> {
        Self::with_engine(library, symbol, ret, params, CallEngine::preferred()?)
    }

    pub fn with_engine(
        library: Option<&LibraryHandle>,
        symbol: &str,
        ret: TypeDescriptor,
        params: impl Into<Params>,
        engine: CallEngine,
    ) -> Result<Self> {
        let library = library.cloned().unwrap_or_else(LibraryHandle::default_namespace);
        let target = library.resolve(symbol)?;
        Self::build(symbol, target, Some(library), ret, params.into().0, engine)
    }

    /// Wraps a function whose address is already known.
    ///
    /// # Safety
    ///
    /// `target` must be a function with exactly this C signature, and must
    /// stay valid for as long as the handle is used.
    pub unsafe fn from_address(
        name: &str,
        target: Address,
        ret: TypeDescriptor,
        params: impl Into<Params>,
        engine: CallEngine,
    ) -> Result<Self> {
        if target.is_null() {
            return Err(Error::NullAddress);
        }
        Self::build(name, target, None, ret, params.into().0, engine)
    }

    fn build(
        name: &str,
        target: Address,
        library: Option<LibraryHandle>,
        ret: TypeDescriptor,
        params: Vec<TypeDescriptor>,
        engine: CallEngine,
    ) -> Result<Self> {
        let ret_scalar = if ret.is_void() {
            None
        } else {
            Some(passing_class(&ret, "return value")?)
        };
        let param_scalars = params
            .iter()
            .enumerate()
            .map(|(i, p)| passing_class(p, &format!("parameter {i}")))
            .collect::<Result<Vec<_>>>()?;
        let plan = match engine {
            CallEngine::Libffi => Plan::Libffi(libffi::PreparedCif::new(ret_scalar, &param_scalars)?),
            CallEngine::Direct => Plan::Direct(direct::DirectPlan::new(ret_scalar, &param_scalars)?),
        };
        Ok(ForeignFunction(Arc::new(Inner {
            name: name.to_string(),
            target,
            ret,
            params,
            library,
            engine,
            plan,
        })))
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn target(&self) -> Address {
        self.0.target
    }

    pub fn return_type(&self) -> &TypeDescriptor {
        &self.0.ret
    }

    pub fn param_types(&self) -> &[TypeDescriptor] {
        &self.0.params
    }

    pub fn engine(&self) -> CallEngine {
        self.0.engine
    }

    /// `ret(p0, p1, ...)` in the type-expression grammar.
    pub fn signature(&self) -> String {
        let params: Vec<String> = self.0.params.iter().map(ToString::to_string).collect();
        format!("{}({})", self.0.ret, params.join(", "))
    }

    fn check_arity(&self, given: usize) -> Result<()> {
        if given != self.0.params.len() {
            return Err(Error::ArityMismatch {
                function: self.0.name.clone(),
                expected: self.0.params.len(),
                actual: given,
            });
        }
        Ok(())
    }

    fn check_library(&self) -> Result<()> {
        match &self.0.library {
            Some(lib) if !lib.is_open() => Err(Error::HandleClosed(lib.name().to_string())),
            _ => Ok(()),
        }
    }

    /// Calls the function, encoding host arguments into scratch memory that
    /// is released before returning. Memory the callee keeps a pointer to
    /// must come from the caller's own arena.
    pub fn invoke<A: Into<Arg>>(&self, args: impl IntoIterator<Item = A>) -> Result<HostValue> {
        let args: Vec<Arg> = args.into_iter().map(Into::into).collect();
        self.check_arity(args.len())?;
        self.check_library()?;
        let scratch = MemoryArena::new();
        let mut cells = vec![0u64; args.len()];
        for (i, ((arg, param), cell)) in args.iter().zip(&self.0.params).zip(&mut cells).enumerate() {
            self.marshal(arg, param, &scratch, cell)
                .map_err(|e| Error::Argument {
                    index: i,
                    source: Box::new(e),
                })?;
        }
        let pointers: Vec<*const c_void> = cells.iter().map(|c| c as *const u64 as *const c_void).collect();
        let mut ret = [0u64; 2];
        unsafe { self.dispatch(&pointers, ret.as_mut_ptr()) };
        let result = unsafe { self.decode_return(&ret) };
        scratch.release();
        result
    }

    fn marshal(
        &self,
        arg: &Arg,
        param: &TypeDescriptor,
        scratch: &MemoryArena,
        cell: &mut u64,
    ) -> Result<()> {
        let is_address = param.as_scalar() == Some(Scalar::Address);
        let bytes = match arg {
            Arg::Host(v) => codec::encode_bytes(v, param, &scratch.as_ref())?,
            Arg::Block(b) if is_address || param.as_scalar() == Some(Scalar::CString) => {
                if !b.is_alive() {
                    return Err(Error::UseAfterRelease);
                }
                b.base().value().to_ne_bytes().to_vec()
            }
            Arg::Block(_) => {
                return Err(Error::TypeMismatch {
                    value: "memory block".into(),
                    ty: param.to_string(),
                })
            }
            Arg::Foreign(fv) if fv.ty().same_layout(param) => fv.bytes()?,
            Arg::Foreign(fv) if is_address => {
                if !fv.block().is_alive() {
                    return Err(Error::UseAfterRelease);
                }
                fv.address().value().to_ne_bytes().to_vec()
            }
            Arg::Foreign(fv) => {
                return Err(Error::TypeMismatch {
                    value: format!("foreign value of type {}", fv.ty()),
                    ty: param.to_string(),
                })
            }
        };
        let mut raw = [0u8; 8];
        raw[..bytes.len()].copy_from_slice(&bytes);
        *cell = u64::from_ne_bytes(raw);
        Ok(())
    }

    unsafe fn dispatch(&self, args: &[*const c_void], ret: *mut u64) {
        match &self.0.plan {
            Plan::Libffi(cif) => unsafe { cif.call(self.0.target, args, ret) },
            Plan::Direct(plan) => unsafe { plan.call(self.0.target, args, ret) },
        }
        flush_c_stdio();
    }

    unsafe fn decode_return(&self, ret: &[u64; 2]) -> Result<HostValue> {
        let Some(scalar) = self.0.ret.as_scalar() else {
            return Ok(HostValue::Null);
        };
        let word = ret[0];
        // Integer results are widened to a full register; keep only the
        // declared width.
        Ok(match scalar {
            Scalar::Int8 => (word as i8).into(),
            Scalar::UInt8 => (word as u8).into(),
            Scalar::Int16 => (word as i16).into(),
            Scalar::UInt16 => (word as u16).into(),
            Scalar::Int32 => (word as i32).into(),
            Scalar::UInt32 => (word as u32).into(),
            Scalar::Int64 => HostValue::Integer(BigInt::from(word as i64)),
            Scalar::UInt64 => HostValue::Integer(BigInt::from(word)),
            Scalar::Float32 | Scalar::Float64 => unsafe {
                codec::decode_scalar(Address::from_ptr(ret.as_ptr()), scalar)?
            },
            Scalar::Address => match word as usize {
                0 => HostValue::Null,
                a => HostValue::Address(Address::new(a)),
            },
            Scalar::CString => match word as usize {
                0 => HostValue::Null,
                _ => unsafe { codec::decode_scalar(Address::from_ptr(ret.as_ptr()), scalar)? },
            },
        })
    }

    /// Calls with arguments already laid out in foreign memory, one address
    /// per parameter. The result is written to a cell allocated from
    /// `arena`.
    ///
    /// # Safety
    ///
    /// Every address must point at a correctly typed value of the matching
    /// parameter type.
    pub unsafe fn invoke_raw(&self, arena: &MemoryArena, args: &[Address]) -> Result<ForeignValue> {
        self.check_arity(args.len())?;
        self.check_library()?;
        let cell = arena.allocate(16)?;
        let pointers: Vec<*const c_void> = args.iter().map(|a| a.as_ptr()).collect();
        let mut ret = [0u64; 2];
        unsafe { self.dispatch(&pointers, ret.as_mut_ptr()) };
        if let Some(scalar) = self.0.ret.as_scalar() {
            // Narrow integers were widened to a register; store at declared width.
            let word = ret[0].to_ne_bytes();
            let bytes = if scalar.is_integer() && cfg!(target_endian = "big") {
                &word[8 - scalar.size()..]
            } else {
                &word[..scalar.size()]
            };
            cell.with_bytes_mut(0, bytes.len(), |dst| dst.copy_from_slice(bytes))?;
        }
        ForeignValue::new(cell, 0, self.0.ret.clone())
    }
}

fn flush_c_stdio() {
    // Keep output written by foreign code ordered with host output.
    unsafe { libc::fflush(std::ptr::null_mut()) };
}
