//! Fibonacci numbers through C code compiled and loaded at run time.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex, Once, OnceLock};
use std::time::{Duration, Instant};

use ffibridge::{ForeignFunction, LibraryHandle, TypeDescriptor};
use num_bigint::BigInt;

use crate::interp::{self, Interpreter};
use crate::{millis, Error, Result};

/// Source written to `libfib.c`.
pub const SOURCE: &str = "int fibonacci2(int n)
{
    if (n < 2)
        return n;
    else
        return fibonacci2(n - 1) + fibonacci2(n - 2);
}
";

pub const ENTRY_SYMBOL: &str = "fibonacci2";

/// Largest `n` whose Fibonacci number fits in a C `int`.
pub const MAX_N: u32 = 46;

/// The naive recurrence evaluated by the host interpreter over
/// arbitrary-precision integers. This is the baseline the compiled code is
/// measured against.
pub fn host_fibonacci(n: u32) -> BigInt {
    static PROGRAM: OnceLock<Interpreter> = OnceLock::new();
    let value = PROGRAM
        .get_or_init(interp::fibonacci_program)
        .call("fibonacci1", n.into())
        .expect("integer program");
    value.as_integer().expect("integer result").clone()
}

/// The same recurrence compiled into this crate, for reference.
pub fn native_fibonacci(n: u32) -> u64 {
    if n < 2 {
        n as u64
    } else {
        native_fibonacci(n - 1) + native_fibonacci(n - 2)
    }
}

/// Linear-time reference.
pub fn iterative_fibonacci(n: u32) -> BigInt {
    let (mut a, mut b) = (BigInt::from(0), BigInt::from(1));
    for _ in 0..n {
        let next = &a + &b;
        a = std::mem::replace(&mut b, next);
    }
    a
}

/// Compiler command from `CC`, default `cc`. Extra words in `CC` become
/// leading arguments.
fn compiler() -> (OsString, Vec<OsString>) {
    let cc = std::env::var_os("CC")
        .filter(|v| !v.is_empty())
        .unwrap_or_else(|| "cc".into());
    let text = cc.to_string_lossy().into_owned();
    let mut words = text.split_whitespace();
    match words.next() {
        Some(program) if words.clone().next().is_some() => {
            (program.into(), words.map(OsString::from).collect())
        }
        _ => (cc, Vec::new()),
    }
}

/// Runs `program leading.. flags.. input -o output`.
fn run(
    (program, leading): &(OsString, Vec<OsString>),
    flags: &[&str],
    input: &Path,
    output: &Path,
    source: &Path,
) -> Result<()> {
    let mut cmd = Command::new(program);
    cmd.args(leading).args(flags).arg(input).arg("-o").arg(output);
    let out = match cmd.output() {
        Ok(out) => out,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::CompilerMissing(program.to_string_lossy().into_owned()))
        }
        Err(e) => return Err(e.into()),
    };
    if !out.status.success() {
        return Err(Error::CompileFailed {
            source_path: source.to_path_buf(),
            stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        });
    }
    Ok(())
}

/// A compiled and loaded `libfib.so` inside its own temporary directory.
#[derive(Debug)]
pub struct JitArtifact {
    work_dir: Option<tempfile::TempDir>,
    work_path: PathBuf,
    source_path: PathBuf,
    object_path: PathBuf,
    library_path: PathBuf,
    handle: LibraryHandle,
    entry: ForeignFunction,
}

impl JitArtifact {
    /// Writes [`SOURCE`], compiles it with `$CC -c -fPIC` then
    /// `$CC -shared`, and loads the result by explicit path.
    pub fn compile() -> Result<Self> {
        let cc = compiler();
        let work_dir = tempfile::Builder::new().prefix("ffibridge-jit-").tempdir()?;
        let dir = work_dir.path().to_path_buf();
        let source_path = dir.join("libfib.c");
        let object_path = dir.join("libfib.o");
        let library_path = dir.join("libfib.so");
        std::fs::write(&source_path, SOURCE)?;
        run(&cc, &["-c", "-fPIC"], &source_path, &object_path, &source_path)?;
        run(&cc, &["-shared"], &object_path, &library_path, &source_path)?;
        let handle = LibraryHandle::open("libfib", Some(&library_path))?;
        let entry = ForeignFunction::new(
            Some(&handle),
            ENTRY_SYMBOL,
            TypeDescriptor::int32(),
            TypeDescriptor::int32(),
        )?;
        Ok(JitArtifact {
            work_dir: Some(work_dir),
            work_path: dir,
            source_path,
            object_path,
            library_path,
            handle,
            entry,
        })
    }

    pub fn work_dir(&self) -> &Path {
        &self.work_path
    }

    pub fn source_path(&self) -> &Path {
        &self.source_path
    }

    pub fn object_path(&self) -> &Path {
        &self.object_path
    }

    pub fn library_path(&self) -> &Path {
        &self.library_path
    }

    pub fn handle(&self) -> &LibraryHandle {
        &self.handle
    }

    pub fn entry(&self) -> &ForeignFunction {
        &self.entry
    }

    /// Calls the compiled function. `n` above [`MAX_N`] is refused.
    pub fn call(&self, n: u32) -> Result<i64> {
        if n > MAX_N {
            return Err(Error::RangeRefused(n));
        }
        let value = self.entry.invoke([n as i32])?;
        Ok(value.to_i64().expect("int32 return"))
    }

    /// Closes the library and deletes the work directory. Also done on drop.
    pub fn teardown(mut self) -> Result<()> {
        self.close()
    }

    fn close(&mut self) -> Result<()> {
        self.handle.close();
        match self.work_dir.take() {
            Some(dir) => Ok(dir.close()?),
            None => Ok(()),
        }
    }
}

impl Drop for JitArtifact {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

/// Compiles a fresh artifact.
pub fn jit_compile() -> Result<JitArtifact> {
    JitArtifact::compile()
}

static CACHE: Mutex<Option<Arc<JitArtifact>>> = Mutex::new(None);

extern "C" fn clear_at_exit() {
    clear_cache();
}

fn cached() -> Result<Arc<JitArtifact>> {
    let mut slot = CACHE.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(artifact) = slot.as_ref() {
        return Ok(artifact.clone());
    }
    let artifact = Arc::new(JitArtifact::compile()?);
    static HOOK: Once = Once::new();
    HOOK.call_once(|| unsafe {
        libc::atexit(clear_at_exit);
    });
    *slot = Some(artifact.clone());
    Ok(artifact)
}

/// Drops the process-wide artifact used by [`jit_fibonacci`]; its directory
/// is removed once no caller still holds it.
pub fn clear_cache() {
    let taken = CACHE.lock().unwrap_or_else(|e| e.into_inner()).take();
    drop(taken);
}

/// Fibonacci through the compiled function, compiling on first use.
pub fn jit_fibonacci(n: u32) -> Result<i64> {
    if n > MAX_N {
        return Err(Error::RangeRefused(n));
    }
    cached()?.call(n)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FibBenchmark {
    pub n: u32,
    pub host_value: BigInt,
    pub jit_value: i64,
    pub host_time: Duration,
    /// Write, compile, load and call.
    pub jit_cold_time: Duration,
    /// Call only, on the already loaded library.
    pub jit_warm_time: Duration,
    /// The recurrence compiled into the host binary.
    pub native_time: Duration,
}

impl FibBenchmark {
    /// Host time over cold JIT time.
    pub fn speedup(&self) -> f64 {
        self.host_time.as_secs_f64() / self.jit_cold_time.as_secs_f64()
    }
}

impl std::fmt::Display for FibBenchmark {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "host fibonacci({}) = {}  ({:.1} ms)",
            self.n,
            self.host_value,
            millis(self.host_time)
        )?;
        writeln!(
            f,
            "jit  fibonacci({}) = {}  ({:.1} ms including compilation, {:.1} ms call only)",
            self.n,
            self.jit_value,
            millis(self.jit_cold_time),
            millis(self.jit_warm_time)
        )?;
        writeln!(f, "compiled host recurrence: {:.1} ms", millis(self.native_time))?;
        write!(f, "speedup over the interpreted host: {:.1}x", self.speedup())
    }
}

/// Times the host recurrence against a freshly compiled artifact. The JIT
/// time includes writing, compiling and loading.
pub fn benchmark_fib(n: u32) -> Result<FibBenchmark> {
    if n > 40 {
        return Err(Error::InvalidInput(format!(
            "benchmark supports n <= 40, got {n}"
        )));
    }
    let start = Instant::now();
    let host_value = host_fibonacci(n);
    let host_time = start.elapsed();

    let start = Instant::now();
    let artifact = JitArtifact::compile()?;
    let jit_value = artifact.call(n)?;
    let jit_cold_time = start.elapsed();

    let start = Instant::now();
    let again = artifact.call(n)?;
    let jit_warm_time = start.elapsed();
    debug_assert_eq!(again, jit_value);
    artifact.teardown()?;

    let start = Instant::now();
    std::hint::black_box(native_fibonacci(std::hint::black_box(n)));
    let native_time = start.elapsed();

    Ok(FibBenchmark {
        n,
        host_value,
        jit_value,
        host_time,
        jit_cold_time,
        jit_warm_time,
        native_time,
    })
}
