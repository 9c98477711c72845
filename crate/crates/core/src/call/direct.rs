//! Direct dispatch for the System V AMD64 calling convention, limited to
//! scalar and address arguments.
//!
//! Integer-class and SSE-class arguments are assigned to registers
//! independently, so every supported signature can be called through one
//! maximal function type: six integer registers, eight SSE registers and a
//! fixed run of stack slots. Unused registers and trailing stack slots are
//! ignored by the callee, and the caller pops the stack.

use std::ffi::c_void;

use crate::error::{Error, Result};
use crate::memory::Address;
use crate::types::Scalar;

pub(crate) const SUPPORTED: bool = cfg!(all(target_arch = "x86_64", unix));

const INT_REGS: usize = 6;
const SSE_REGS: usize = 8;
pub(crate) const STACK_SLOTS: usize = 16;

#[derive(Clone, Copy, Debug)]
enum Location {
    Int(usize),
    Sse(usize),
    Stack(usize),
}

pub(crate) struct DirectPlan {
    params: Vec<(Scalar, Location)>,
    ret: Option<Scalar>,
}

impl DirectPlan {
    pub(crate) fn new(ret: Option<Scalar>, params: &[Scalar]) -> Result<Self> {
        if !SUPPORTED {
            return Err(Error::EngineUnavailable(
                "direct dispatch only supports x86-64 System V".into(),
            ));
        }
        let (mut ints, mut sses, mut stack) = (0, 0, 0);
        let mut placed = Vec::with_capacity(params.len());
        for &s in params {
            let location = if s.is_float() && sses < SSE_REGS {
                sses += 1;
                Location::Sse(sses - 1)
            } else if !s.is_float() && ints < INT_REGS {
                ints += 1;
                Location::Int(ints - 1)
            } else {
                stack += 1;
                Location::Stack(stack - 1)
            };
            placed.push((s, location));
        }
        if stack > STACK_SLOTS {
            return Err(Error::UnsupportedType(format!(
                "direct dispatch passes at most {STACK_SLOTS} stack arguments, signature needs {stack}"
            )));
        }
        Ok(DirectPlan { params: placed, ret })
    }

    /// # Safety
    ///
    /// As for the libffi engine: typed argument storage and a 16-byte,
    /// 8-aligned return cell.
    #[cfg(all(target_arch = "x86_64", unix))]
    pub(crate) unsafe fn call(&self, target: Address, args: &[*const c_void], ret: *mut u64) {
        let mut ints = [0u64; INT_REGS];
        let mut sses = [0f64; SSE_REGS];
        let mut stack = [0u64; STACK_SLOTS];
        for (&(scalar, location), &arg) in self.params.iter().zip(args) {
            let bits = unsafe { load_bits(scalar, arg) };
            match location {
                Location::Int(i) => ints[i] = bits,
                Location::Sse(i) => sses[i] = f64::from_bits(bits),
                Location::Stack(i) => stack[i] = bits,
            }
        }
        type IntReturn = unsafe extern "C" fn(
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            f64,
            f64,
            f64,
            f64,
            f64,
            f64,
            f64,
            f64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
        ) -> u64;
        type SseReturn = unsafe extern "C" fn(
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            f64,
            f64,
            f64,
            f64,
            f64,
            f64,
            f64,
            f64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
            u64,
        ) -> f64;
        let [i0, i1, i2, i3, i4, i5] = ints;
        let [x0, x1, x2, x3, x4, x5, x6, x7] = sses;
        let [s0, s1, s2, s3, s4, s5, s6, s7, s8, s9, s10, s11, s12, s13, s14, s15] = stack;
        let result = match self.ret {
            Some(s) if s.is_float() => unsafe {
                let f = std::mem::transmute::<*const c_void, SseReturn>(target.as_ptr());
                f(
                    i0, i1, i2, i3, i4, i5, x0, x1, x2, x3, x4, x5, x6, x7, s0, s1, s2, s3, s4, s5, s6, s7,
                    s8, s9, s10, s11, s12, s13, s14, s15,
                )
                .to_bits()
            },
            _ => unsafe {
                let f = std::mem::transmute::<*const c_void, IntReturn>(target.as_ptr());
                f(
                    i0, i1, i2, i3, i4, i5, x0, x1, x2, x3, x4, x5, x6, x7, s0, s1, s2, s3, s4, s5, s6, s7,
                    s8, s9, s10, s11, s12, s13, s14, s15,
                )
            },
        };
        unsafe { ret.write(result) };
    }

    #[cfg(not(all(target_arch = "x86_64", unix)))]
    pub(crate) unsafe fn call(&self, _target: Address, _args: &[*const c_void], _ret: *mut u64) {
        unreachable!("plans are never built on unsupported targets")
    }
}

/// Reads one argument and widens it to a full register image: integers
/// sign- or zero-extended to 64 bits, floats as their raw bit pattern in the
/// low lanes.
unsafe fn load_bits(scalar: Scalar, arg: *const c_void) -> u64 {
    unsafe {
        match scalar {
            Scalar::Int8 => arg.cast::<i8>().read_unaligned() as i64 as u64,
            Scalar::UInt8 => arg.cast::<u8>().read_unaligned() as u64,
            Scalar::Int16 => arg.cast::<i16>().read_unaligned() as i64 as u64,
            Scalar::UInt16 => arg.cast::<u16>().read_unaligned() as u64,
            Scalar::Int32 => arg.cast::<i32>().read_unaligned() as i64 as u64,
            Scalar::UInt32 | Scalar::Float32 => arg.cast::<u32>().read_unaligned() as u64,
            Scalar::Int64 | Scalar::UInt64 | Scalar::Float64 => arg.cast::<u64>().read_unaligned(),
            Scalar::Address | Scalar::CString => arg.cast::<usize>().read_unaligned() as u64,
        }
    }
}
