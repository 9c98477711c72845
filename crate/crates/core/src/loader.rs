//! Run-time loading of shared libraries and symbol lookup.
//!
//! A bare library name is decorated with the platform prefix and suffix
//! (`fftw3` becomes `libfftw3.so` on Linux) and searched for first in the
//! directories listed in `FFI_LIBRARY_PATH`, then through the system loader.
//! Libraries are opened with local symbol visibility.

use std::ffi::{CStr, CString};
use std::fmt;
use std::os::unix::ffi::OsStrExt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use crate::error::{Error, Result};
use crate::memory::{run_cleanups, Address, Lifecycle, Release};

/// Environment variable holding extra library directories, colon-separated.
pub const LIBRARY_PATH_VAR: &str = "FFI_LIBRARY_PATH";

// dlopen/dlclose and the dlerror slot are serialized through this lock.
static LOADER_LOCK: Mutex<()> = Mutex::new(());

fn loader_lock() -> MutexGuard<'static, ()> {
    LOADER_LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

/// Ordered list of directories searched before the system loader.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SearchPath {
    dirs: Vec<PathBuf>,
}

impl SearchPath {
    pub fn new(dirs: impl IntoIterator<Item = PathBuf>) -> Self {
        SearchPath {
            dirs: dirs.into_iter().collect(),
        }
    }

    /// Directories from `FFI_LIBRARY_PATH`, empty entries ignored.
    pub fn from_env() -> Self {
        let dirs = std::env::var_os(LIBRARY_PATH_VAR)
            .map(|v| {
                std::env::split_paths(&v)
                    .filter(|p| !p.as_os_str().is_empty())
                    .collect()
            })
            .unwrap_or_default();
        SearchPath { dirs }
    }

    pub fn prepend(&mut self, dir: impl Into<PathBuf>) {
        self.dirs.insert(0, dir.into());
    }

    pub fn dirs(&self) -> &[PathBuf] {
        &self.dirs
    }
}

/// Platform file name for a bare library name.
pub fn decorate(name: &str) -> String {
    let (prefix, suffix) = if cfg!(target_os = "macos") {
        ("lib", ".dylib")
    } else if cfg!(windows) {
        ("", ".dll")
    } else {
        ("lib", ".so")
    };
    if name.contains(suffix) {
        return name.to_string();
    }
    if name.starts_with(prefix) {
        format!("{name}{suffix}")
    } else {
        format!("{prefix}{name}{suffix}")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LibrarySource {
    File(PathBuf),
    DefaultNamespace,
}

impl fmt::Display for LibrarySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LibrarySource::File(p) => write!(f, "{}", p.display()),
            LibrarySource::DefaultNamespace => f.write_str("default namespace"),
        }
    }
}

struct RawHandle(*mut libc::c_void);

// dlopen handles are process-global tokens, valid on any thread.
unsafe impl Send for RawHandle {}

struct LibraryState {
    raw: RawHandle,
    lifecycle: Lifecycle,
}

struct LibraryInner {
    name: String,
    source: LibrarySource,
    state: Mutex<LibraryState>,
}

impl Drop for LibraryInner {
    fn drop(&mut self) {
        let state = self.state.get_mut().unwrap_or_else(|e| e.into_inner());
        if let Some(actions) = state.lifecycle.begin_release() {
            run_cleanups(actions);
            let _guard = loader_lock();
            unsafe { libc::dlclose(state.raw.0) };
        }
    }
}

/// An open shared library (or the process's own symbol namespace).
///
/// Clones share the same underlying handle; closing one closes all.
#[derive(Clone)]
pub struct LibraryHandle(Arc<LibraryInner>);

impl fmt::Debug for LibraryHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LibraryHandle")
            .field("name", &self.0.name)
            .field("source", &self.0.source)
            .field("open", &self.is_open())
            .finish()
    }
}

impl fmt::Display for LibraryHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.name)
    }
}

fn last_dl_error() -> String {
    let msg = unsafe { libc::dlerror() };
    if msg.is_null() {
        "unknown loader error".to_string()
    } else {
        unsafe { CStr::from_ptr(msg) }.to_string_lossy().into_owned()
    }
}

enum DlOpen {
    Opened(RawHandle),
    Missing,
    Failed(String),
}

fn dlopen(path: &Path) -> DlOpen {
    let Ok(c_path) = CString::new(path.as_os_str().as_bytes()) else {
        return DlOpen::Failed("path contains a NUL byte".into());
    };
    let _guard = loader_lock();
    let raw = unsafe { libc::dlopen(c_path.as_ptr(), libc::RTLD_NOW | libc::RTLD_LOCAL) };
    if !raw.is_null() {
        return DlOpen::Opened(RawHandle(raw));
    }
    let message = last_dl_error();
    if message.contains("No such file") || message.contains("image not found") {
        DlOpen::Missing
    } else {
        DlOpen::Failed(message)
    }
}

impl LibraryHandle {
    fn from_raw(name: &str, source: LibrarySource, raw: RawHandle) -> Self {
        LibraryHandle(Arc::new(LibraryInner {
            name: name.to_string(),
            source,
            state: Mutex::new(LibraryState {
                raw,
                lifecycle: Lifecycle::default(),
            }),
        }))
    }

    /// Opens `name`, or exactly `explicit_path` when given, searching
    /// `FFI_LIBRARY_PATH` first.
    pub fn open(name: &str, explicit_path: Option<&Path>) -> Result<Self> {
        Self::open_with(name, explicit_path, &SearchPath::from_env())
    }

    pub fn open_with(name: &str, explicit_path: Option<&Path>, search: &SearchPath) -> Result<Self> {
        if let Some(path) = explicit_path {
            return match dlopen(path) {
                DlOpen::Opened(raw) => Ok(Self::from_raw(name, LibrarySource::File(path.into()), raw)),
                DlOpen::Missing if !path.exists() => Err(Error::NotFound {
                    name: name.to_string(),
                    tried: vec![path.into()],
                }),
                DlOpen::Missing => Err(Error::LoaderError {
                    path: path.into(),
                    message: "dependency not found".into(),
                }),
                DlOpen::Failed(message) => Err(Error::LoaderError {
                    path: path.into(),
                    message,
                }),
            };
        }

        // Names carrying a directory component are taken as paths.
        if name.contains('/') {
            return Self::open_with(name, Some(Path::new(name)), search);
        }

        let file_name = decorate(name);
        let mut tried = Vec::new();
        for dir in search.dirs() {
            let candidate = dir.join(&file_name);
            tried.push(candidate.clone());
            if !candidate.exists() {
                continue;
            }
            return match dlopen(&candidate) {
                DlOpen::Opened(raw) => Ok(Self::from_raw(name, LibrarySource::File(candidate), raw)),
                DlOpen::Missing => Err(Error::LoaderError {
                    path: candidate,
                    message: "dependency not found".into(),
                }),
                DlOpen::Failed(message) => Err(Error::LoaderError {
                    path: candidate,
                    message,
                }),
            };
        }

        let system = PathBuf::from(&file_name);
        tried.push(system.clone());
        match dlopen(&system) {
            DlOpen::Opened(raw) => Ok(Self::from_raw(name, LibrarySource::File(system), raw)),
            DlOpen::Missing => Err(Error::NotFound {
                name: name.to_string(),
                tried,
            }),
            DlOpen::Failed(message) => Err(Error::LoaderError {
                path: system,
                message,
            }),
        }
    }

    /// The running process and everything it has already loaded.
    pub fn default_namespace() -> Self {
        let _guard = loader_lock();
        let raw = unsafe { libc::dlopen(std::ptr::null(), libc::RTLD_NOW) };
        drop(_guard);
        LibraryHandle::from_raw(
            "default namespace",
            LibrarySource::DefaultNamespace,
            RawHandle(raw),
        )
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn source(&self) -> &LibrarySource {
        &self.0.source
    }

    fn lock(&self) -> MutexGuard<'_, LibraryState> {
        self.0.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn is_open(&self) -> bool {
        self.lock().lifecycle.is_alive()
    }

    /// Looks up `symbol`; the result is never null.
    pub fn resolve(&self, symbol: &str) -> Result<Address> {
        let state = self.lock();
        if !state.lifecycle.is_alive() {
            return Err(Error::HandleClosed(self.0.name.clone()));
        }
        let not_found = || Error::SymbolNotFound {
            library: self.0.name.clone(),
            symbol: symbol.to_string(),
        };
        let c_symbol = CString::new(symbol).map_err(|_| not_found())?;
        let _guard = loader_lock();
        unsafe { libc::dlerror() };
        let address = unsafe { libc::dlsym(state.raw.0, c_symbol.as_ptr()) };
        if address.is_null() {
            Err(not_found())
        } else {
            Ok(Address::from_ptr(address))
        }
    }

    pub fn register_cleanup(&self, action: impl FnOnce() + Send + 'static) -> Result<()> {
        self.lock()
            .lifecycle
            .register(&format!("library `{}`", self.0.name), Box::new(action))
    }

    /// Runs registered cleanups (newest first) and unloads the library.
    /// Closing an already closed handle does nothing.
    pub fn close(&self) {
        let actions = self.lock().lifecycle.begin_release();
        let Some(actions) = actions else {
            return;
        };
        run_cleanups(actions);
        let state = self.lock();
        let _guard = loader_lock();
        unsafe { libc::dlclose(state.raw.0) };
    }
}

impl Release for LibraryHandle {
    fn release(&self) {
        self.close()
    }
}
