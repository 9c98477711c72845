//! Conversion between host values and their foreign byte representation.
//!
//! Encoding is strict: integers must fit the target width, reals are never
//! truncated into integer cells, and records must name exactly the fields of
//! the target struct. All multi-byte values use native byte order.

use std::ffi::CStr;
use std::fmt;

use indexmap::IndexMap;
use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::memory::{Address, ArenaRef, MemoryArena, MemoryBlock};
use crate::types::{Kind, Scalar, TypeDescriptor};

/// A value on the host side of the boundary.
#[derive(Clone, Debug, PartialEq)]
pub enum HostValue {
    /// Arbitrary-precision signed integer; width limits apply only on encode.
    Integer(BigInt),
    Real(f64),
    /// Encodes like a two-element list of reals.
    Complex {
        re: f64,
        im: f64,
    },
    /// A byte string.
    Text(Vec<u8>),
    List(Vec<HostValue>),
    Record(IndexMap<String, HostValue>),
    Address(Address),
    Null,
}

impl HostValue {
    pub fn text(s: impl Into<Vec<u8>>) -> Self {
        HostValue::Text(s.into())
    }

    pub fn record<I, S>(fields: I) -> Self
    where
        I: IntoIterator<Item = (S, HostValue)>,
        S: Into<String>,
    {
        HostValue::Record(fields.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn reals(values: &[f64]) -> Self {
        HostValue::List(values.iter().copied().map(HostValue::Real).collect())
    }

    pub fn as_integer(&self) -> Option<&BigInt> {
        match self {
            HostValue::Integer(i) => Some(i),
            _ => None,
        }
    }

    pub fn to_i64(&self) -> Option<i64> {
        self.as_integer().and_then(ToPrimitive::to_i64)
    }

    /// Reals as-is; integers converted to the nearest double.
    pub fn to_f64(&self) -> Option<f64> {
        match self {
            HostValue::Real(r) => Some(*r),
            HostValue::Integer(i) => i.to_f64(),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&[u8]> {
        match self {
            HostValue::Text(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[HostValue]> {
        match self {
            HostValue::List(l) => Some(l),
            _ => None,
        }
    }

    pub fn as_address(&self) -> Option<Address> {
        match self {
            HostValue::Address(a) => Some(*a),
            HostValue::Null => Some(Address::NULL),
            _ => None,
        }
    }

    fn summary(&self) -> String {
        let text = self.to_string();
        if text.len() > 40 {
            format!("{}...", &text[..text.floor_char_boundary(40)])
        } else {
            text
        }
    }
}

macro_rules! from_integer {
    ($($t:ty),*) => {$(
        impl From<$t> for HostValue {
            fn from(v: $t) -> Self {
                HostValue::Integer(BigInt::from(v))
            }
        }
    )*};
}
from_integer!(i8, u8, i16, u16, i32, u32, i64, u64, i128, u128, isize, usize);

impl From<BigInt> for HostValue {
    fn from(v: BigInt) -> Self {
        HostValue::Integer(v)
    }
}

impl From<f64> for HostValue {
    fn from(v: f64) -> Self {
        HostValue::Real(v)
    }
}

impl From<f32> for HostValue {
    fn from(v: f32) -> Self {
        HostValue::Real(v.into())
    }
}

impl From<&str> for HostValue {
    fn from(v: &str) -> Self {
        HostValue::Text(v.as_bytes().to_vec())
    }
}

impl From<String> for HostValue {
    fn from(v: String) -> Self {
        HostValue::Text(v.into_bytes())
    }
}

impl From<Address> for HostValue {
    fn from(v: Address) -> Self {
        HostValue::Address(v)
    }
}

impl From<Vec<HostValue>> for HostValue {
    fn from(v: Vec<HostValue>) -> Self {
        HostValue::List(v)
    }
}

/// Renders a real with at most 15 significant digits and no trailing zeros.
pub fn format_real(value: f64) -> String {
    if value.is_nan() {
        return "nan".into();
    }
    if value.is_infinite() {
        return if value > 0.0 { "inf" } else { "-inf" }.into();
    }
    if value == 0.0 {
        return if value.is_sign_negative() { "-0" } else { "0" }.into();
    }
    let sci = format!("{value:.14e}");
    let (mantissa, exponent) = sci.split_once('e').expect("exponent always present");
    let exponent: i32 = exponent.parse().expect("integer exponent");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    if (-5..15).contains(&exponent) {
        let (int_part, frac_part) = if exponent >= 0 {
            let split = exponent as usize + 1;
            (digits[..split].to_string(), digits[split..].to_string())
        } else {
            let zeros = "0".repeat((-exponent - 1) as usize);
            ("0".to_string(), format!("{zeros}{digits}"))
        };
        let frac = frac_part.trim_end_matches('0');
        if frac.is_empty() {
            format!("{sign}{int_part}")
        } else {
            format!("{sign}{int_part}.{frac}")
        }
    } else {
        let frac = digits[1..].trim_end_matches('0');
        let lead = &digits[..1];
        if frac.is_empty() {
            format!("{sign}{lead}e{exponent}")
        } else {
            format!("{sign}{lead}.{frac}e{exponent}")
        }
    }
}

impl fmt::Display for HostValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn nested(f: &mut fmt::Formatter<'_>, v: &HostValue) -> fmt::Result {
            match v {
                HostValue::Text(t) => write!(f, "{:?}", String::from_utf8_lossy(t)),
                other => write!(f, "{other}"),
            }
        }
        match self {
            HostValue::Integer(i) => write!(f, "{i}"),
            HostValue::Real(r) => f.write_str(&format_real(*r)),
            HostValue::Complex { re, im } => {
                let sign = if im.is_sign_negative() { "-" } else { "+" };
                write!(f, "{}{sign}{}i", format_real(*re), format_real(im.abs()))
            }
            HostValue::Text(t) => f.write_str(&String::from_utf8_lossy(t)),
            HostValue::List(items) => {
                f.write_str("[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    nested(f, item)?;
                }
                f.write_str("]")
            }
            HostValue::Record(fields) => {
                f.write_str("{")?;
                for (i, (name, item)) in fields.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{name}: ")?;
                    nested(f, item)?;
                }
                f.write_str("}")
            }
            HostValue::Address(a) => write!(f, "{a}"),
            HostValue::Null => f.write_str("null"),
        }
    }
}

/// A typed value living in foreign memory.
#[derive(Clone, Debug)]
pub struct ForeignValue {
    ty: TypeDescriptor,
    block: MemoryBlock,
    offset: usize,
}

impl ForeignValue {
    /// Views `ty` at `offset` inside `block`.
    pub fn new(block: MemoryBlock, offset: usize, ty: TypeDescriptor) -> Result<Self> {
        match offset.checked_add(ty.size()) {
            Some(end) if end <= block.len() => Ok(ForeignValue { ty, block, offset }),
            _ => Err(Error::OutOfBounds {
                offset,
                size: ty.size(),
                length: block.len(),
            }),
        }
    }

    pub fn ty(&self) -> &TypeDescriptor {
        &self.ty
    }

    pub fn block(&self) -> &MemoryBlock {
        &self.block
    }

    pub fn address(&self) -> Address {
        self.block.base().offset(self.offset)
    }

    pub fn decode(&self) -> Result<HostValue> {
        if self.ty.is_void() {
            return Ok(HostValue::Null);
        }
        self.block.read_at(self.offset, &self.ty)
    }

    pub fn decode_member(&self, member: &str) -> Result<HostValue> {
        self.block.read_union_member(self.offset, &self.ty, member)
    }

    pub fn bytes(&self) -> Result<Vec<u8>> {
        self.block.with_bytes(self.offset, self.ty.size(), <[u8]>::to_vec)
    }
}

/// Allocates storage for `ty` in `arena` and encodes `value` into it.
pub fn encode(value: &HostValue, ty: &TypeDescriptor, arena: &MemoryArena) -> Result<ForeignValue> {
    if ty.is_void() {
        return Err(mismatch(value, ty));
    }
    let bytes = encode_bytes(value, ty, &arena.as_ref())?;
    let block = arena.allocate(ty.size())?;
    block.with_bytes_mut(0, bytes.len(), |dst| dst.copy_from_slice(&bytes))?;
    ForeignValue::new(block, 0, ty.clone())
}

/// Decodes the value of type `ty` stored at `address`.
///
/// # Safety
///
/// `address` must be readable for `ty.size()` bytes and every `cstring` cell
/// must be null or point at a NUL-terminated string.
pub unsafe fn decode(address: Address, ty: &TypeDescriptor) -> Result<HostValue> {
    unsafe { decode_raw(address, ty) }
}

/// Produces the encoded bytes of `value`, allocating string buffers from
/// `arena`. Buffers allocated before a failure are released again.
pub(crate) fn encode_bytes(value: &HostValue, ty: &TypeDescriptor, arena: &ArenaRef<'_>) -> Result<Vec<u8>> {
    let mut encoder = Encoder {
        arena,
        buffers: Vec::new(),
    };
    let mut out = vec![0u8; ty.size()];
    match encoder.write(&mut out, value, ty) {
        Ok(()) => Ok(out),
        Err(e) => {
            for buffer in encoder.buffers {
                buffer.release();
            }
            Err(e)
        }
    }
}

fn mismatch(value: &HostValue, ty: &TypeDescriptor) -> Error {
    Error::TypeMismatch {
        value: value.summary(),
        ty: ty.to_string(),
    }
}

struct Encoder<'a, 'b> {
    arena: &'a ArenaRef<'b>,
    buffers: Vec<MemoryBlock>,
}

impl Encoder<'_, '_> {
    fn write(&mut self, out: &mut [u8], value: &HostValue, ty: &TypeDescriptor) -> Result<()> {
        match ty.kind() {
            Kind::Void => Err(mismatch(value, ty)),
            Kind::Scalar(s) => self.scalar(out, value, *s, ty),
            Kind::Array { element, count } => {
                let items = composite_items(value, ty)?;
                if items.len() != *count {
                    return Err(Error::LengthMismatch {
                        expected: *count,
                        actual: items.len(),
                        ty: ty.to_string(),
                    });
                }
                let stride = element.size();
                for (i, item) in items.iter().enumerate() {
                    self.write(&mut out[i * stride..(i + 1) * stride], item, element)?;
                }
                Ok(())
            }
            Kind::Struct { fields } => {
                if let HostValue::Complex { .. } = value {
                    let items = composite_items(value, ty)?;
                    if fields.len() != 2 {
                        return Err(mismatch(value, ty));
                    }
                    for (field, item) in fields.iter().zip(&items) {
                        let end = field.offset + field.ty.size();
                        self.write(&mut out[field.offset..end], item, &field.ty)?;
                    }
                    return Ok(());
                }
                let HostValue::Record(record) = value else {
                    return Err(mismatch(value, ty));
                };
                if let Some(extra) = record.keys().find(|k| ty.field(k).is_none()) {
                    return Err(Error::UnknownField {
                        field: extra.clone(),
                        ty: ty.to_string(),
                    });
                }
                for field in fields {
                    let item = record.get(&field.name).ok_or_else(|| Error::MissingField {
                        field: field.name.clone(),
                        ty: ty.to_string(),
                    })?;
                    let end = field.offset + field.ty.size();
                    self.write(&mut out[field.offset..end], item, &field.ty)?;
                }
                Ok(())
            }
            Kind::Union { .. } => {
                let HostValue::Record(record) = value else {
                    return Err(mismatch(value, ty));
                };
                if record.len() != 1 {
                    return Err(Error::UnionMemberCount {
                        given: record.len(),
                        ty: ty.to_string(),
                    });
                }
                let (name, item) = record.iter().next().expect("one member");
                let field = ty.field(name).ok_or_else(|| Error::UnknownField {
                    field: name.clone(),
                    ty: ty.to_string(),
                })?;
                self.write(&mut out[..field.ty.size()], item, &field.ty)
            }
        }
    }

    fn scalar(
        &mut self,
        out: &mut [u8],
        value: &HostValue,
        scalar: Scalar,
        ty: &TypeDescriptor,
    ) -> Result<()> {
        match scalar {
            s if s.is_integer() => {
                let HostValue::Integer(i) = value else {
                    return Err(mismatch(value, ty));
                };
                write_integer(out, i, s).ok_or_else(|| Error::IntegerOutOfRange {
                    value: i.to_string(),
                    ty: ty.to_string(),
                })
            }
            Scalar::Float32 => {
                let v = value.to_f64().ok_or_else(|| mismatch(value, ty))?;
                let narrowed = v as f32;
                if v.is_finite() && narrowed.is_infinite() {
                    return Err(Error::RealOutOfRange {
                        value: v,
                        ty: ty.to_string(),
                    });
                }
                out.copy_from_slice(&narrowed.to_ne_bytes());
                Ok(())
            }
            Scalar::Float64 => {
                let v = value.to_f64().ok_or_else(|| mismatch(value, ty))?;
                out.copy_from_slice(&v.to_ne_bytes());
                Ok(())
            }
            Scalar::Address => {
                let a = value.as_address().ok_or_else(|| mismatch(value, ty))?;
                out.copy_from_slice(&a.value().to_ne_bytes());
                Ok(())
            }
            Scalar::CString => {
                let address = match value {
                    HostValue::Null => Address::NULL,
                    HostValue::Text(text) => {
                        if let Some(i) = text.iter().position(|&b| b == 0) {
                            return Err(Error::InteriorNul(i));
                        }
                        let buffer = self.arena.allocate(text.len() + 1)?;
                        self.buffers.push(buffer.clone());
                        buffer.with_bytes_mut(0, text.len(), |dst| dst.copy_from_slice(text))?;
                        buffer.base()
                    }
                    _ => return Err(mismatch(value, ty)),
                };
                out.copy_from_slice(&address.value().to_ne_bytes());
                Ok(())
            }
            _ => unreachable!("all integer kinds handled above"),
        }
    }
}

fn composite_items(value: &HostValue, ty: &TypeDescriptor) -> Result<Vec<HostValue>> {
    match value {
        HostValue::List(items) => Ok(items.clone()),
        HostValue::Complex { re, im } => Ok(vec![HostValue::Real(*re), HostValue::Real(*im)]),
        _ => Err(mismatch(value, ty)),
    }
}

fn write_integer(out: &mut [u8], value: &BigInt, scalar: Scalar) -> Option<()> {
    match scalar {
        Scalar::Int8 => out.copy_from_slice(&value.to_i8()?.to_ne_bytes()),
        Scalar::UInt8 => out.copy_from_slice(&value.to_u8()?.to_ne_bytes()),
        Scalar::Int16 => out.copy_from_slice(&value.to_i16()?.to_ne_bytes()),
        Scalar::UInt16 => out.copy_from_slice(&value.to_u16()?.to_ne_bytes()),
        Scalar::Int32 => out.copy_from_slice(&value.to_i32()?.to_ne_bytes()),
        Scalar::UInt32 => out.copy_from_slice(&value.to_u32()?.to_ne_bytes()),
        Scalar::Int64 => out.copy_from_slice(&value.to_i64()?.to_ne_bytes()),
        Scalar::UInt64 => out.copy_from_slice(&value.to_u64()?.to_ne_bytes()),
        _ => return None,
    }
    Some(())
}

unsafe fn read<T: Copy>(address: Address) -> T {
    unsafe { std::ptr::read_unaligned(address.as_ptr::<T>()) }
}

/// Decodes one scalar at `address`.
///
/// # Safety
///
/// As for [`decode`].
pub(crate) unsafe fn decode_scalar(address: Address, scalar: Scalar) -> Result<HostValue> {
    unsafe {
        Ok(match scalar {
            Scalar::Int8 => read::<i8>(address).into(),
            Scalar::UInt8 => read::<u8>(address).into(),
            Scalar::Int16 => read::<i16>(address).into(),
            Scalar::UInt16 => read::<u16>(address).into(),
            Scalar::Int32 => read::<i32>(address).into(),
            Scalar::UInt32 => read::<u32>(address).into(),
            Scalar::Int64 => read::<i64>(address).into(),
            Scalar::UInt64 => read::<u64>(address).into(),
            Scalar::Float32 => HostValue::Real(read::<f32>(address).into()),
            Scalar::Float64 => HostValue::Real(read::<f64>(address)),
            Scalar::Address => match read::<usize>(address) {
                0 => HostValue::Null,
                a => HostValue::Address(Address::new(a)),
            },
            Scalar::CString => {
                let target = read::<usize>(address);
                if target == 0 {
                    return Err(Error::NullAddress);
                }
                let text = CStr::from_ptr(target as *const libc::c_char);
                HostValue::Text(text.to_bytes().to_vec())
            }
        })
    }
}

pub(crate) unsafe fn decode_raw(address: Address, ty: &TypeDescriptor) -> Result<HostValue> {
    unsafe {
        match ty.kind() {
            Kind::Void => Ok(HostValue::Null),
            Kind::Scalar(s) => decode_scalar(address, *s),
            Kind::Array { element, count } => (0..*count)
                .map(|i| decode_raw(address.offset(i * element.size()), element))
                .collect::<Result<Vec<_>>>()
                .map(HostValue::List),
            Kind::Struct { fields } => fields
                .iter()
                .map(|f| Ok((f.name.clone(), decode_raw(address.offset(f.offset), &f.ty)?)))
                .collect::<Result<IndexMap<_, _>>>()
                .map(HostValue::Record),
            Kind::Union { .. } => Err(Error::UnionNeedsMember(ty.to_string())),
        }
    }
}

/// Decodes union `ty` at `address` through `member`, as a one-entry record.
///
/// # Safety
///
/// As for [`decode`].
pub unsafe fn decode_union_member(address: Address, ty: &TypeDescriptor, member: &str) -> Result<HostValue> {
    if !matches!(ty.kind(), Kind::Union { .. }) {
        return Err(Error::TypeMismatch {
            value: format!("member `{member}`"),
            ty: ty.to_string(),
        });
    }
    let field = ty.field(member).ok_or_else(|| Error::UnknownField {
        field: member.to_string(),
        ty: ty.to_string(),
    })?;
    let value = unsafe { decode_raw(address, &field.ty)? };
    Ok(HostValue::record([(member, value)]))
}

impl HostValue {
    /// True for integer zero and real zero.
    pub fn is_zero(&self) -> bool {
        match self {
            HostValue::Integer(i) => i.is_zero(),
            HostValue::Real(r) => *r == 0.0,
            _ => false,
        }
    }
}
