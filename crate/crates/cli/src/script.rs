//! Script syntax: one statement per line, `#` starts a comment.
//!
//! ```text
//! openlib m = "fftw3" [at "/path/libfftw3.so"]
//! deftype pt = {x:f64, y:f64}
//! defn puts = fn("puts") i32(cstr)
//! defn plan = fn(m, "fftw_plan_dft_1d") ptr(i32, ptr, ptr, i32, u32)
//! set x = i32(5)
//! alloc buf = [4 x f64]
//! call r = puts("Hello, world!")
//! call puts(greeting)
//! print r
//! print sizeof(pt)
//! release buf
//! ```

use std::collections::HashMap;
use std::fmt;

use ffibridge::{parse_type, HostValue, TypeDescriptor};
use num_bigint::BigInt;

/// A parse or validation failure at a 1-based line and column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntaxError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)
    }
}

impl std::error::Error for SyntaxError {}

/// A type expression kept as text and resolved against the names in scope.
#[derive(Clone, Debug, PartialEq)]
pub struct TypeText {
    pub text: String,
    pub column: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ArgExpr {
    Literal(HostValue),
    Name { name: String, column: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Stmt {
    OpenLib {
        name: String,
        library: String,
        path: Option<String>,
    },
    DefType {
        name: String,
        ty: TypeText,
    },
    DefFn {
        name: String,
        library: Option<(String, usize)>,
        symbol: String,
        ret: TypeText,
        params: Vec<TypeText>,
    },
    Set {
        name: String,
        ty: TypeText,
        value: HostValue,
    },
    Alloc {
        name: String,
        ty: TypeText,
    },
    Call {
        name: Option<String>,
        function: String,
        function_column: usize,
        args: Vec<ArgExpr>,
    },
    Print {
        name: String,
        column: usize,
    },
    PrintSize {
        ty: TypeText,
    },
    Release {
        name: String,
        column: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Statement {
    pub line: usize,
    pub stmt: Stmt,
}

/// Parses every line of `source`. Stops at the first error.
pub fn parse_script(source: &str) -> Result<Vec<Statement>, SyntaxError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        if let Some(stmt) = parse_line(line, i + 1)? {
            out.push(Statement { line: i + 1, stmt });
        }
    }
    Ok(out)
}

/// Parses one line; blank and comment-only lines give `None`.
pub fn parse_line(line: &str, number: usize) -> Result<Option<Stmt>, SyntaxError> {
    let mut c = Cursor {
        chars: line.chars().collect(),
        pos: 0,
        line: number,
    };
    c.skip_space();
    if c.at_end() {
        return Ok(None);
    }
    let keyword_column = c.column();
    let keyword = c.ident().ok_or_else(|| c.error("expected a statement keyword"))?;
    let stmt = match keyword.as_str() {
        "openlib" => {
            let name = c.binding()?;
            let library = c.string()?;
            c.skip_space();
            let path = if c.peek_word("at") {
                c.ident();
                Some(c.string()?)
            } else {
                None
            };
            Stmt::OpenLib { name, library, path }
        }
        "deftype" => {
            let name = c.binding()?;
            Stmt::DefType {
                name,
                ty: c.rest_as_type()?,
            }
        }
        "defn" => {
            let name = c.binding()?;
            c.skip_space();
            if c.ident().as_deref() != Some("fn") {
                return Err(c.error("expected fn(...)"));
            }
            c.expect('(')?;
            c.skip_space();
            let library = if c.peek() == Some('"') {
                None
            } else {
                let col = c.column();
                let lib = c
                    .ident()
                    .ok_or_else(|| c.error("expected a library name or a string"))?;
                c.expect(',')?;
                Some((lib, col))
            };
            let symbol = c.string()?;
            c.expect(')')?;
            let (ret, inner) = c.type_with_parens()?;
            let params = split_top_level(&inner.text)
                .into_iter()
                .filter(|(s, _)| !s.trim().is_empty())
                .map(|(s, offset)| TypeText {
                    text: s.trim().to_string(),
                    column: inner.column + offset + (s.len() - s.trim_start().len()),
                })
                .collect();
            Stmt::DefFn {
                name,
                library,
                symbol,
                ret,
                params,
            }
        }
        "set" => {
            let name = c.binding()?;
            c.skip_space();
            let ty_column = c.column();
            let ty_text = c.take_while(|ch| ch != '(').trim_end().to_string();
            if ty_text.is_empty() {
                return Err(c.error("expected a type"));
            }
            c.expect('(')?;
            let value = match c.argument()? {
                ArgExpr::Literal(v) => v,
                ArgExpr::Name { column, .. } => {
                    return Err(SyntaxError {
                        line: number,
                        column,
                        message: "set takes a literal".into(),
                    })
                }
            };
            c.expect(')')?;
            Stmt::Set {
                name,
                ty: TypeText {
                    text: ty_text,
                    column: ty_column,
                },
                value,
            }
        }
        "alloc" => {
            let name = c.binding()?;
            Stmt::Alloc {
                name,
                ty: c.rest_as_type()?,
            }
        }
        "call" => {
            c.skip_space();
            let first_column = c.column();
            let first = c.ident().ok_or_else(|| c.error("expected a name"))?;
            c.skip_space();
            let (name, function, function_column) = if c.peek() == Some('=') {
                c.pos += 1;
                c.skip_space();
                let col = c.column();
                let f = c.ident().ok_or_else(|| c.error("expected a function name"))?;
                (Some(first), f, col)
            } else {
                (None, first, first_column)
            };
            c.expect('(')?;
            let mut args = Vec::new();
            c.skip_space();
            if c.peek() != Some(')') {
                loop {
                    args.push(c.argument()?);
                    c.skip_space();
                    if c.peek() == Some(',') {
                        c.pos += 1;
                    } else {
                        break;
                    }
                }
            }
            c.expect(')')?;
            Stmt::Call {
                name,
                function,
                function_column,
                args,
            }
        }
        "print" => {
            c.skip_space();
            let column = c.column();
            let name = c
                .ident()
                .ok_or_else(|| c.error("expected a name or sizeof(type)"))?;
            c.skip_space();
            if name == "sizeof" && c.peek() == Some('(') {
                c.pos += 1;
                c.skip_space();
                let col = c.column();
                let text = c.take_while(|ch| ch != ')').trim_end().to_string();
                c.expect(')')?;
                Stmt::PrintSize {
                    ty: TypeText { text, column: col },
                }
            } else {
                Stmt::Print { name, column }
            }
        }
        "release" => {
            c.skip_space();
            let column = c.column();
            let name = c.ident().ok_or_else(|| c.error("expected a name"))?;
            Stmt::Release { name, column }
        }
        other => {
            return Err(SyntaxError {
                line: number,
                column: keyword_column,
                message: format!("unknown statement `{other}`"),
            })
        }
    };
    c.skip_space();
    if !c.at_end() {
        return Err(c.error("unexpected text after statement"));
    }
    Ok(Some(stmt))
}

/// Splits on commas outside brackets, returning pieces with byte offsets.
fn split_top_level(s: &str) -> Vec<(&str, usize)> {
    let mut out = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, ch) in s.char_indices() {
        match ch {
            '{' | '[' | '(' => depth += 1,
            '}' | ']' | ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push((&s[start..i], start));
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push((&s[start..], start));
    out
}

struct Cursor {
    chars: Vec<char>,
    pos: usize,
    line: usize,
}

impl Cursor {
    fn column(&self) -> usize {
        self.pos + 1
    }

    fn error(&self, message: impl Into<String>) -> SyntaxError {
        SyntaxError {
            line: self.line,
            column: self.column(),
            message: message.into(),
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.chars.len() || self.chars[self.pos] == '#'
    }

    fn peek(&self) -> Option<char> {
        if self.at_end() {
            None
        } else {
            Some(self.chars[self.pos])
        }
    }

    fn skip_space(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek_word(&self, word: &str) -> bool {
        let end = self.pos + word.chars().count();
        end <= self.chars.len()
            && self.chars[self.pos..end].iter().copied().eq(word.chars())
            && self.chars.get(end).is_none_or(|c| !is_ident(*c))
    }

    fn ident(&mut self) -> Option<String> {
        let start = self.pos;
        if !self.peek().is_some_and(|c| c.is_ascii_alphabetic() || c == '_') {
            return None;
        }
        while self.peek().is_some_and(is_ident) {
            self.pos += 1;
        }
        Some(self.chars[start..self.pos].iter().collect())
    }

    fn expect(&mut self, ch: char) -> Result<(), SyntaxError> {
        self.skip_space();
        if self.peek() == Some(ch) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected `{ch}`")))
        }
    }

    /// `NAME =`
    fn binding(&mut self) -> Result<String, SyntaxError> {
        self.skip_space();
        let name = self.ident().ok_or_else(|| self.error("expected a name"))?;
        self.expect('=')?;
        Ok(name)
    }

    fn take_while(&mut self, keep: impl Fn(char) -> bool) -> String {
        let start = self.pos;
        while self.peek().is_some_and(&keep) {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn rest_as_type(&mut self) -> Result<TypeText, SyntaxError> {
        self.skip_space();
        let column = self.column();
        let text = self.take_while(|_| true).trim_end().to_string();
        if text.is_empty() {
            return Err(self.error("expected a type"));
        }
        Ok(TypeText { text, column })
    }

    /// `TYPE(INNER)`, returning both parts.
    fn type_with_parens(&mut self) -> Result<(TypeText, TypeText), SyntaxError> {
        self.skip_space();
        let column = self.column();
        let text = self.take_while(|c| c != '(').trim_end().to_string();
        if text.is_empty() {
            return Err(self.error("expected a return type"));
        }
        self.expect('(')?;
        let inner_column = self.column();
        let inner = self.take_while(|c| c != ')');
        self.expect(')')?;
        Ok((
            TypeText { text, column },
            TypeText {
                text: inner,
                column: inner_column,
            },
        ))
    }

    fn string(&mut self) -> Result<String, SyntaxError> {
        self.skip_space();
        if self.peek() != Some('"') {
            return Err(self.error("expected a string"));
        }
        self.pos += 1;
        let mut out = String::new();
        loop {
            let Some(&ch) = self.chars.get(self.pos) else {
                return Err(self.error("unterminated string"));
            };
            self.pos += 1;
            match ch {
                '"' => return Ok(out),
                '\\' => {
                    let Some(&esc) = self.chars.get(self.pos) else {
                        return Err(self.error("unterminated string"));
                    };
                    self.pos += 1;
                    out.push(match esc {
                        'n' => '\n',
                        't' => '\t',
                        'r' => '\r',
                        '0' => '\0',
                        '\\' => '\\',
                        '"' => '"',
                        other => {
                            self.pos -= 1;
                            return Err(self.error(format!("unknown escape `\\{other}`")));
                        }
                    });
                }
                other => out.push(other),
            }
        }
    }

    fn argument(&mut self) -> Result<ArgExpr, SyntaxError> {
        self.skip_space();
        match self.peek() {
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                let column = self.column();
                let name = self.ident().expect("checked start");
                Ok(match name.as_str() {
                    "null" => ArgExpr::Literal(HostValue::Null),
                    _ => ArgExpr::Name { name, column },
                })
            }
            _ => Ok(ArgExpr::Literal(self.literal()?)),
        }
    }

    fn literal(&mut self) -> Result<HostValue, SyntaxError> {
        self.skip_space();
        match self.peek() {
            Some('"') => Ok(HostValue::text(self.string()?)),
            Some('[') => {
                self.pos += 1;
                let mut items = Vec::new();
                self.skip_space();
                if self.peek() != Some(']') {
                    loop {
                        items.push(self.literal()?);
                        self.skip_space();
                        if self.peek() == Some(',') {
                            self.pos += 1;
                        } else {
                            break;
                        }
                    }
                }
                self.expect(']')?;
                Ok(HostValue::List(items))
            }
            Some('{') => {
                self.pos += 1;
                let mut fields = Vec::new();
                loop {
                    self.skip_space();
                    let name = self.ident().ok_or_else(|| self.error("expected a field name"))?;
                    self.expect(':')?;
                    fields.push((name, self.literal()?));
                    self.skip_space();
                    if self.peek() == Some(',') {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                self.expect('}')?;
                Ok(HostValue::record(fields))
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let column = self.column();
                match self.ident().as_deref() {
                    Some("null") => Ok(HostValue::Null),
                    _ => Err(SyntaxError {
                        line: self.line,
                        column,
                        message: "names are not allowed inside literals".into(),
                    }),
                }
            }
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => self.number(),
            _ => Err(self.error("expected a value")),
        }
    }

    fn number(&mut self) -> Result<HostValue, SyntaxError> {
        let start = self.pos;
        let column = self.column();
        let text = self.take_while(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '+' | '_'));
        let bad = || SyntaxError {
            line: self.line,
            column,
            message: format!("malformed number `{text}`"),
        };
        let digits = text.replace('_', "");
        let is_real = digits.contains(['.', 'e', 'E']) || digits.contains("inf") || digits.contains("nan");
        let value = if is_real {
            digits.parse::<f64>().map(HostValue::Real).map_err(|_| bad())?
        } else if let Some(hex) = digits.strip_prefix("0x") {
            BigInt::parse_bytes(hex.as_bytes(), 16)
                .map(HostValue::Integer)
                .ok_or_else(bad)?
        } else {
            digits
                .parse::<BigInt>()
                .map(HostValue::Integer)
                .map_err(|_| bad())?
        };
        debug_assert!(self.pos > start);
        Ok(value)
    }
}

fn is_ident(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// What a name is bound to, as far as validation can tell.
#[derive(Clone, Debug, PartialEq)]
pub enum Binding {
    Library,
    Type(TypeDescriptor),
    Function { arity: usize },
    Value,
}

impl Binding {
    fn kind(&self) -> &'static str {
        match self {
            Binding::Library => "a library",
            Binding::Type(_) => "a type",
            Binding::Function { .. } => "a function",
            Binding::Value => "a value",
        }
    }
}

/// Names in scope during validation and execution.
#[derive(Clone, Debug, Default)]
pub struct Scope {
    names: HashMap<String, Binding>,
}

impl Scope {
    pub fn get(&self, name: &str) -> Option<&Binding> {
        self.names.get(name)
    }

    pub fn resolve_type(&self, text: &TypeText, line: usize) -> Result<TypeDescriptor, SyntaxError> {
        let lookup = |n: &str| match self.names.get(n) {
            Some(Binding::Type(t)) => Some(t.clone()),
            _ => None,
        };
        parse_type(&text.text, &lookup).map_err(|e| match e {
            ffibridge::Error::TypeSyntax { message, column } => SyntaxError {
                line,
                column: text.column + column - 1,
                message,
            },
            other => SyntaxError {
                line,
                column: text.column,
                message: other.to_string(),
            },
        })
    }

    /// Checks `statement` against the names bound so far and records the
    /// names it binds.
    pub fn validate(&mut self, statement: &Statement) -> Result<(), SyntaxError> {
        let line = statement.line;
        let err = |column: usize, message: String| SyntaxError {
            line,
            column,
            message,
        };
        let expect =
            |scope: &Scope, name: &str, column: usize, want: fn(&Binding) -> bool, what: &str| match scope
                .get(name)
            {
                None => Err(err(column, format!("`{name}` is not defined"))),
                Some(b) if !want(b) => Err(err(column, format!("`{name}` is {}, expected {what}", b.kind()))),
                Some(_) => Ok(()),
            };
        match &statement.stmt {
            Stmt::OpenLib { name, .. } => {
                self.names.insert(name.clone(), Binding::Library);
            }
            Stmt::DefType { name, ty } => {
                let t = self.resolve_type(ty, line)?;
                if t.is_void() {
                    return Err(err(ty.column, "cannot name the void type".into()));
                }
                self.names.insert(name.clone(), Binding::Type(t));
            }
            Stmt::DefFn {
                name,
                library,
                ret,
                params,
                ..
            } => {
                if let Some((lib, column)) = library {
                    expect(self, lib, *column, |b| matches!(b, Binding::Library), "a library")?;
                }
                self.resolve_type(ret, line)?;
                for p in params {
                    self.resolve_type(p, line)?;
                }
                self.names
                    .insert(name.clone(), Binding::Function { arity: params.len() });
            }
            Stmt::Set { name, ty, .. } | Stmt::Alloc { name, ty } => {
                if self.resolve_type(ty, line)?.is_void() {
                    return Err(err(ty.column, "cannot store a void value".into()));
                }
                self.names.insert(name.clone(), Binding::Value);
            }
            Stmt::Call {
                name,
                function,
                function_column,
                args,
            } => {
                expect(
                    self,
                    function,
                    *function_column,
                    |b| matches!(b, Binding::Function { .. }),
                    "a function",
                )?;
                if let Some(Binding::Function { arity }) = self.get(function) {
                    if *arity != args.len() {
                        return Err(err(
                            *function_column,
                            format!("`{function}` takes {arity} argument(s), {} given", args.len()),
                        ));
                    }
                }
                for arg in args {
                    if let ArgExpr::Name { name, column } = arg {
                        expect(self, name, *column, |b| matches!(b, Binding::Value), "a value")?;
                    }
                }
                if let Some(name) = name {
                    self.names.insert(name.clone(), Binding::Value);
                }
            }
            Stmt::Print { name, column } => {
                expect(self, name, *column, |b| matches!(b, Binding::Value), "a value")?;
            }
            Stmt::PrintSize { ty } => {
                self.resolve_type(ty, line)?;
            }
            Stmt::Release { name, column } => {
                expect(
                    self,
                    name,
                    *column,
                    |b| matches!(b, Binding::Value | Binding::Library),
                    "a value or a library",
                )?;
            }
        }
        Ok(())
    }
}

/// Parses and validates a whole script without executing anything.
pub fn check_script(source: &str) -> Result<Vec<Statement>, SyntaxError> {
    let statements = parse_script(source)?;
    let mut scope = Scope::default();
    for s in &statements {
        scope.validate(s)?;
    }
    Ok(statements)
}
