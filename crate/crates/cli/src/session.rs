//! Executes script statements against live libraries and memory.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use ffibridge::types::Field;
use ffibridge::{
    format_real, Arg, ForeignFunction, ForeignValue, HostValue, Kind, LibraryHandle, MemoryArena, SearchPath,
    TypeDescriptor,
};

use crate::script::{parse_line, ArgExpr, Scope, Statement, Stmt, SyntaxError};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("{0}")]
    Syntax(#[from] SyntaxError),
    #[error("line {line} (statement {statement}): {source}")]
    Runtime {
        line: usize,
        statement: usize,
        #[source]
        source: ffibridge::Error,
    },
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

impl SessionError {
    /// True when the failure comes from the machine rather than the script:
    /// a missing library or no usable call engine.
    pub fn is_environmental(&self) -> bool {
        matches!(
            self,
            SessionError::Runtime {
                source: ffibridge::Error::NotFound { .. }
                    | ffibridge::Error::LoaderError { .. }
                    | ffibridge::Error::EngineUnavailable(_),
                ..
            }
        )
    }
}

enum Slot {
    Foreign(ForeignValue),
    Host(HostValue, TypeDescriptor),
}

/// Interpreter state shared by script runs and the REPL.
pub struct Session<W: Write> {
    out: W,
    search: SearchPath,
    scope: Scope,
    arena: MemoryArena,
    libraries: HashMap<String, LibraryHandle>,
    type_names: Vec<(String, TypeDescriptor)>,
    functions: HashMap<String, ForeignFunction>,
    values: HashMap<String, Slot>,
    executed: usize,
}

/// Renders a value for output. Addresses vary between runs, so any
/// non-null address prints as `<address>`. Text is always quoted.
pub fn render(value: &HostValue) -> String {
    fn go(v: &HostValue, out: &mut String) {
        match v {
            HostValue::Address(a) if a.is_null() => out.push_str("null"),
            HostValue::Address(_) => out.push_str("<address>"),
            HostValue::Text(t) => out.push_str(&format!("{:?}", String::from_utf8_lossy(t))),
            HostValue::List(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    go(item, out);
                }
                out.push(']');
            }
            HostValue::Record(fields) => {
                out.push('{');
                for (i, (name, item)) in fields.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    out.push_str(name);
                    out.push_str(": ");
                    go(item, out);
                }
                out.push('}');
            }
            HostValue::Real(r) => out.push_str(&format_real(*r)),
            other => out.push_str(&other.to_string()),
        }
    }
    let mut out = String::new();
    go(value, &mut out);
    out
}

extern "C" {
    fn fflush(stream: *mut std::ffi::c_void) -> i32;
}

/// Flushes C stdio so text written by foreign code keeps its place
/// relative to ours.
fn flush_c_stdio() {
    unsafe { fflush(std::ptr::null_mut()) };
}

impl<W: Write> Session<W> {
    pub fn new(out: W, search: SearchPath) -> Self {
        Session {
            out,
            search,
            scope: Scope::default(),
            arena: MemoryArena::new(),
            libraries: HashMap::new(),
            type_names: Vec::new(),
            functions: HashMap::new(),
            values: HashMap::new(),
            executed: 0,
        }
    }

    pub fn into_output(self) -> W {
        self.out
    }

    /// Writes `ty` using the names given by `deftype` wherever one fits.
    fn type_label(&self, ty: &TypeDescriptor) -> String {
        if let Some((name, _)) = self.type_names.iter().rev().find(|(_, t)| t == ty) {
            return name.clone();
        }
        self.spell_out(ty)
    }

    fn spell_out(&self, ty: &TypeDescriptor) -> String {
        let members = |fields: &[Field]| {
            let parts: Vec<String> = fields
                .iter()
                .map(|f| format!("{}:{}", f.name, self.type_label(&f.ty)))
                .collect();
            format!("{{{}}}", parts.join(", "))
        };
        match ty.kind() {
            Kind::Array { element, count } => format!("[{count} x {}]", self.type_label(element)),
            Kind::Struct { fields } => members(fields),
            Kind::Union { fields } => format!("union{}", members(fields)),
            Kind::Void | Kind::Scalar(_) => ty.to_string(),
        }
    }

    /// Parses, validates and executes one line.
    pub fn execute_line(&mut self, line: &str, number: usize) -> Result<(), SessionError> {
        match parse_line(line, number)? {
            Some(stmt) => self.execute(&Statement { line: number, stmt }),
            None => Ok(()),
        }
    }

    /// Validates then executes one statement. Names it binds become visible
    /// only if it succeeds.
    pub fn execute(&mut self, statement: &Statement) -> Result<(), SessionError> {
        let mut scope = self.scope.clone();
        scope.validate(statement)?;
        self.executed += 1;
        let (line, index) = (statement.line, self.executed);
        let rt = |source| SessionError::Runtime {
            line,
            statement: index,
            source,
        };
        match &statement.stmt {
            Stmt::OpenLib { name, library, path } => {
                let handle = LibraryHandle::open_with(library, path.as_deref().map(Path::new), &self.search)
                    .map_err(rt)?;
                if let Some(old) = self.libraries.insert(name.clone(), handle) {
                    old.close();
                }
                writeln!(self.out, "{name} : library")?;
            }
            Stmt::DefType { name, ty } => {
                let t = self.scope.resolve_type(ty, line)?;
                writeln!(self.out, "{name} : type {}", self.spell_out(&t))?;
                self.type_names.push((name.clone(), t));
            }
            Stmt::DefFn {
                name,
                library,
                symbol,
                ret,
                params,
            } => {
                let ret = self.scope.resolve_type(ret, line)?;
                let params = params
                    .iter()
                    .map(|p| self.scope.resolve_type(p, line))
                    .collect::<Result<Vec<_>, _>>()?;
                let lib = library.as_ref().map(|(l, _)| &self.libraries[l]);
                let f = ForeignFunction::new(lib, symbol, ret, params).map_err(rt)?;
                writeln!(self.out, "{name} : foreign function {}", f.signature())?;
                self.functions.insert(name.clone(), f);
            }
            Stmt::Set { name, ty, value } => {
                let t = self.scope.resolve_type(ty, line)?;
                let fv = self.arena.boxed(value, &t).map_err(rt)?;
                let shown = self.bind(name, Slot::Foreign(fv)).map_err(rt)?;
                writeln!(self.out, "{shown}")?;
            }
            Stmt::Alloc { name, ty } => {
                let t = self.scope.resolve_type(ty, line)?;
                let block = self.arena.allocate(t.size()).map_err(rt)?;
                let fv = ForeignValue::new(block, 0, t).map_err(rt)?;
                let shown = self.bind(name, Slot::Foreign(fv)).map_err(rt)?;
                writeln!(self.out, "{shown}")?;
            }
            Stmt::Call {
                name, function, args, ..
            } => {
                let f = self.functions[function].clone();
                let args = args
                    .iter()
                    .map(|a| match a {
                        ArgExpr::Literal(v) => Arg::Host(v.clone()),
                        ArgExpr::Name { name, .. } => match &self.values[name] {
                            Slot::Foreign(fv) => Arg::Foreign(fv.clone()),
                            Slot::Host(v, _) => Arg::Host(v.clone()),
                        },
                    })
                    .collect::<Vec<_>>();
                self.out.flush()?;
                let result = f.invoke(args);
                flush_c_stdio();
                let value = result.map_err(rt)?;
                let ty = f.return_type().clone();
                match name {
                    Some(name) => {
                        let shown = self.bind(name, Slot::Host(value, ty)).map_err(rt)?;
                        writeln!(self.out, "{shown}")?;
                    }
                    None if ty.is_void() => {}
                    None => writeln!(self.out, "{} : {}", render(&value), self.type_label(&ty))?,
                }
            }
            Stmt::Print { name, .. } => {
                let (value, ty) = self.read(name).map_err(rt)?;
                writeln!(self.out, "{name} = {} : {}", render(&value), self.type_label(&ty))?;
            }
            Stmt::PrintSize { ty } => {
                let t = self.scope.resolve_type(ty, line)?;
                writeln!(self.out, "sizeof({}) = {}", ty.text, t.size())?;
            }
            Stmt::Release { name, .. } => {
                if let Some(lib) = self.libraries.get(name) {
                    lib.close();
                } else if let Some(Slot::Foreign(fv)) = self.values.get(name) {
                    fv.block().release();
                }
                writeln!(self.out, "released {name}")?;
            }
        }
        self.scope = scope;
        Ok(())
    }

    /// Stores `slot` under `name` and returns its transcript line.
    fn bind(&mut self, name: &str, slot: Slot) -> ffibridge::Result<String> {
        self.values.insert(name.to_string(), slot);
        let (value, ty) = self.read(name)?;
        Ok(if ty.is_void() {
            format!("{name} : void")
        } else {
            format!("{name} = {} : {}", render(&value), self.type_label(&ty))
        })
    }

    fn read(&self, name: &str) -> ffibridge::Result<(HostValue, TypeDescriptor)> {
        match &self.values[name] {
            Slot::Foreign(fv) => Ok((fv.decode()?, fv.ty().clone())),
            Slot::Host(v, t) => Ok((v.clone(), t.clone())),
        }
    }

    /// Runs a whole script: every line is checked before anything executes.
    pub fn run_script(&mut self, source: &str) -> Result<(), SessionError> {
        let statements = crate::script::parse_script(source)?;
        let mut scope = self.scope.clone();
        for s in &statements {
            scope.validate(s)?;
        }
        for s in &statements {
            self.execute(s)?;
        }
        self.out.flush()?;
        Ok(())
    }
}

impl fmt::Debug for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::Foreign(fv) => write!(f, "Foreign({})", fv.ty()),
            Slot::Host(v, t) => write!(f, "Host({}, {t})", render(v)),
        }
    }
}
