//! Foreign type descriptors and their C ABI layout.
//!
//! A [`TypeDescriptor`] is an immutable, cheaply clonable description of a C
//! type. Composite layouts follow natural alignment with trailing padding:
//! every field sits at the smallest multiple of its alignment past the end of
//! the previous field, and the aggregate size is rounded up to the aggregate
//! alignment. Bitfields, packed structs and flexible array members are not
//! representable.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Width of `address` and `cstring` cells on the running target.
pub const WORD_SIZE: usize = std::mem::size_of::<usize>();

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scalar {
    Int8,
    UInt8,
    Int16,
    UInt16,
    Int32,
    UInt32,
    Int64,
    UInt64,
    Float32,
    Float64,
    /// An untyped machine address (`void *`).
    Address,
    /// A pointer to a NUL-terminated byte string (`char *`).
    CString,
}

impl Scalar {
    pub const ALL: [Scalar; 12] = [
        Scalar::Int8,
        Scalar::UInt8,
        Scalar::Int16,
        Scalar::UInt16,
        Scalar::Int32,
        Scalar::UInt32,
        Scalar::Int64,
        Scalar::UInt64,
        Scalar::Float32,
        Scalar::Float64,
        Scalar::Address,
        Scalar::CString,
    ];

    pub const fn size(self) -> usize {
        match self {
            Scalar::Int8 | Scalar::UInt8 => 1,
            Scalar::Int16 | Scalar::UInt16 => 2,
            Scalar::Int32 | Scalar::UInt32 | Scalar::Float32 => 4,
            Scalar::Int64 | Scalar::UInt64 | Scalar::Float64 => 8,
            Scalar::Address | Scalar::CString => WORD_SIZE,
        }
    }

    pub const fn is_integer(self) -> bool {
        matches!(
            self,
            Scalar::Int8
                | Scalar::UInt8
                | Scalar::Int16
                | Scalar::UInt16
                | Scalar::Int32
                | Scalar::UInt32
                | Scalar::Int64
                | Scalar::UInt64
        )
    }

    pub const fn is_signed(self) -> bool {
        matches!(self, Scalar::Int8 | Scalar::Int16 | Scalar::Int32 | Scalar::Int64)
    }

    pub const fn is_float(self) -> bool {
        matches!(self, Scalar::Float32 | Scalar::Float64)
    }

    /// Keyword used by the type-expression grammar.
    pub const fn keyword(self) -> &'static str {
        match self {
            Scalar::Int8 => "i8",
            Scalar::UInt8 => "u8",
            Scalar::Int16 => "i16",
            Scalar::UInt16 => "u16",
            Scalar::Int32 => "i32",
            Scalar::UInt32 => "u32",
            Scalar::Int64 => "i64",
            Scalar::UInt64 => "u64",
            Scalar::Float32 => "f32",
            Scalar::Float64 => "f64",
            Scalar::Address => "ptr",
            Scalar::CString => "cstr",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Scalar> {
        Scalar::ALL.into_iter().find(|s| s.keyword() == word)
    }
}

/// A named member of a struct or union.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Field {
    pub name: String,
    pub ty: TypeDescriptor,
    /// Byte offset from the start of the aggregate. Always 0 for unions.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Kind {
    Void,
    Scalar(Scalar),
    Array { element: TypeDescriptor, count: usize },
    Struct { fields: Vec<Field> },
    Union { fields: Vec<Field> },
}

#[derive(Debug, PartialEq, Eq, Hash)]
struct Node {
    kind: Kind,
    size: usize,
    alignment: usize,
}

/// Description of a C type together with its computed layout.
///
/// Equality is structural and includes field names; use
/// [`TypeDescriptor::same_layout`] to compare memory shape only.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TypeDescriptor(Arc<Node>);

fn round_up(offset: usize, alignment: usize) -> usize {
    offset.div_ceil(alignment) * alignment
}

impl TypeDescriptor {
    pub fn void() -> Self {
        TypeDescriptor(Arc::new(Node {
            kind: Kind::Void,
            size: 0,
            alignment: 1,
        }))
    }

    pub fn scalar(scalar: Scalar) -> Self {
        TypeDescriptor(Arc::new(Node {
            kind: Kind::Scalar(scalar),
            size: scalar.size(),
            alignment: scalar.size(),
        }))
    }

    pub fn int8() -> Self {
        Self::scalar(Scalar::Int8)
    }
    pub fn uint8() -> Self {
        Self::scalar(Scalar::UInt8)
    }
    pub fn int16() -> Self {
        Self::scalar(Scalar::Int16)
    }
    pub fn uint16() -> Self {
        Self::scalar(Scalar::UInt16)
    }
    pub fn int32() -> Self {
        Self::scalar(Scalar::Int32)
    }
    pub fn uint32() -> Self {
        Self::scalar(Scalar::UInt32)
    }
    pub fn int64() -> Self {
        Self::scalar(Scalar::Int64)
    }
    pub fn uint64() -> Self {
        Self::scalar(Scalar::UInt64)
    }
    pub fn float32() -> Self {
        Self::scalar(Scalar::Float32)
    }
    pub fn float64() -> Self {
        Self::scalar(Scalar::Float64)
    }
    pub fn address() -> Self {
        Self::scalar(Scalar::Address)
    }
    pub fn cstring() -> Self {
        Self::scalar(Scalar::CString)
    }

    /// Builds a struct, placing each field at the next offset aligned for it.
    pub fn make_struct<I, S>(fields: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, TypeDescriptor)>,
        S: Into<String>,
    {
        let members = check_members(fields, "struct")?;
        let mut end = 0;
        let mut alignment = 1;
        let mut laid_out = Vec::with_capacity(members.len());
        for (name, ty) in members {
            let offset = round_up(end, ty.alignment());
            end = offset + ty.size();
            alignment = alignment.max(ty.alignment());
            laid_out.push(Field { name, ty, offset });
        }
        Ok(TypeDescriptor(Arc::new(Node {
            kind: Kind::Struct { fields: laid_out },
            size: round_up(end, alignment),
            alignment,
        })))
    }

    /// Builds a union; every member starts at offset 0.
    pub fn make_union<I, S>(members: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, TypeDescriptor)>,
        S: Into<String>,
    {
        let members = check_members(members, "union")?;
        let alignment = members.iter().map(|(_, t)| t.alignment()).max().unwrap_or(1);
        let widest = members.iter().map(|(_, t)| t.size()).max().unwrap_or(0);
        let fields = members
            .into_iter()
            .map(|(name, ty)| Field { name, ty, offset: 0 })
            .collect();
        Ok(TypeDescriptor(Arc::new(Node {
            kind: Kind::Union { fields },
            size: round_up(widest, alignment),
            alignment,
        })))
    }

    pub fn make_array(element: TypeDescriptor, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidType("array count must be at least 1".into()));
        }
        if element.is_void() {
            return Err(Error::InvalidType("array element may not be void".into()));
        }
        let size = element
            .size()
            .checked_mul(count)
            .ok_or_else(|| Error::InvalidType(format!("array of {count} elements overflows")))?;
        let alignment = element.alignment();
        Ok(TypeDescriptor(Arc::new(Node {
            kind: Kind::Array { element, count },
            size,
            alignment,
        })))
    }

    pub fn kind(&self) -> &Kind {
        &self.0.kind
    }

    pub fn size(&self) -> usize {
        self.0.size
    }

    pub fn alignment(&self) -> usize {
        self.0.alignment
    }

    pub fn is_void(&self) -> bool {
        matches!(self.0.kind, Kind::Void)
    }

    pub fn as_scalar(&self) -> Option<Scalar> {
        match self.0.kind {
            Kind::Scalar(s) => Some(s),
            _ => None,
        }
    }

    /// Struct or union members; empty for every other kind.
    pub fn fields(&self) -> &[Field] {
        match &self.0.kind {
            Kind::Struct { fields } | Kind::Union { fields } => fields,
            _ => &[],
        }
    }

    pub fn field(&self, name: &str) -> Option<&Field> {
        self.fields().iter().find(|f| f.name == name)
    }

    /// Field offsets of a struct, in declaration order.
    pub fn offsets(&self) -> Vec<usize> {
        self.fields().iter().map(|f| f.offset).collect()
    }

    /// Compares memory shape, ignoring member names.
    pub fn same_layout(&self, other: &TypeDescriptor) -> bool {
        if self.size() != other.size() || self.alignment() != other.alignment() {
            return false;
        }
        match (self.kind(), other.kind()) {
            (Kind::Void, Kind::Void) => true,
            (Kind::Scalar(a), Kind::Scalar(b)) => a == b,
            (Kind::Array { element: a, count: n }, Kind::Array { element: b, count: m }) => {
                n == m && a.same_layout(b)
            }
            (Kind::Struct { fields: a }, Kind::Struct { fields: b })
            | (Kind::Union { fields: a }, Kind::Union { fields: b }) => {
                a.len() == b.len()
                    && a.iter()
                        .zip(b)
                        .all(|(x, y)| x.offset == y.offset && x.ty.same_layout(&y.ty))
            }
            _ => false,
        }
    }
}

fn check_members<I, S>(members: I, what: &str) -> Result<Vec<(String, TypeDescriptor)>>
where
    I: IntoIterator<Item = (S, TypeDescriptor)>,
    S: Into<String>,
{
    let members: Vec<(String, TypeDescriptor)> = members.into_iter().map(|(n, t)| (n.into(), t)).collect();
    if members.is_empty() {
        return Err(Error::InvalidType(format!("{what} needs at least one member")));
    }
    for (i, (name, ty)) in members.iter().enumerate() {
        if ty.is_void() {
            return Err(Error::InvalidType(format!("{what} member `{name}` is void")));
        }
        if members[..i].iter().any(|(other, _)| other == name) {
            return Err(Error::InvalidType(format!("duplicate {what} member `{name}`")));
        }
    }
    Ok(members)
}

impl From<Scalar> for TypeDescriptor {
    fn from(s: Scalar) -> Self {
        TypeDescriptor::scalar(s)
    }
}

impl fmt::Display for TypeDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn members(f: &mut fmt::Formatter<'_>, fields: &[Field]) -> fmt::Result {
            f.write_str("{")?;
            for (i, field) in fields.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{}:{}", field.name, field.ty)?;
            }
            f.write_str("}")
        }
        match self.kind() {
            Kind::Void => f.write_str("void"),
            Kind::Scalar(s) => f.write_str(s.keyword()),
            Kind::Array { element, count } => write!(f, "[{count} x {element}]"),
            Kind::Struct { fields } => members(f, fields),
            Kind::Union { fields } => {
                f.write_str("union")?;
                members(f, fields)
            }
        }
    }
}

/// Parses a type expression such as `[4 x {re:f64, im:f64}]`.
///
/// Bare identifiers that are not scalar keywords are looked up through
/// `named`, which lets callers refer to previously defined types.
pub fn parse_type(src: &str, named: &dyn Fn(&str) -> Option<TypeDescriptor>) -> Result<TypeDescriptor> {
    let mut parser = TypeParser { src, pos: 0, named };
    let ty = parser.ty()?;
    parser.skip_ws();
    if parser.pos != src.len() {
        return Err(parser.error("trailing input"));
    }
    Ok(ty)
}

struct TypeParser<'a> {
    src: &'a str,
    pos: usize,
    named: &'a dyn Fn(&str) -> Option<TypeDescriptor>,
}

impl TypeParser<'_> {
    fn error(&self, msg: &str) -> Error {
        Error::TypeSyntax {
            message: msg.to_string(),
            column: self.pos + 1,
        }
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(&format!("expected `{c}`")))
        }
    }

    fn word(&mut self) -> Option<String> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let len = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(rest.len());
        if len == 0 {
            return None;
        }
        self.pos += len;
        Some(rest[..len].to_string())
    }

    fn ty(&mut self) -> Result<TypeDescriptor> {
        self.skip_ws();
        if self.eat('[') {
            let start = self.pos;
            let count: usize = self
                .word()
                .and_then(|w| w.parse().ok())
                .ok_or_else(|| Error::TypeSyntax {
                    message: "expected array count".into(),
                    column: start + 1,
                })?;
            if self.word().as_deref() != Some("x") {
                return Err(self.error("expected `x` after array count"));
            }
            let element = self.ty()?;
            self.expect(']')?;
            return TypeDescriptor::make_array(element, count);
        }
        if self.src[self.pos..].starts_with('{') {
            let fields = self.members()?;
            return TypeDescriptor::make_struct(fields);
        }
        let start = self.pos;
        let Some(word) = self.word() else {
            return Err(self.error("expected a type"));
        };
        if word == "union" {
            let fields = self.members()?;
            return TypeDescriptor::make_union(fields);
        }
        if word == "void" {
            return Ok(TypeDescriptor::void());
        }
        if let Some(s) = Scalar::from_keyword(&word) {
            return Ok(TypeDescriptor::scalar(s));
        }
        (self.named)(&word).ok_or(Error::TypeSyntax {
            message: format!("unknown type `{word}`"),
            column: start + 1,
        })
    }

    fn members(&mut self) -> Result<Vec<(String, TypeDescriptor)>> {
        self.expect('{')?;
        let mut out = Vec::new();
        loop {
            let Some(name) = self.word() else {
                return Err(self.error("expected member name"));
            };
            self.expect(':')?;
            out.push((name, self.ty()?));
            if self.eat('}') {
                return Ok(out);
            }
            self.expect(',')?;
        }
    }
}
