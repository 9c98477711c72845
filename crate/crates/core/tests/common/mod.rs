//! Locates or builds the native ABI fixture for integration tests.
//!
//! `FFIB_FIXTURE_LIB` points at a prebuilt fixture. Otherwise the bundled C
//! source is compiled with `$CC` (default `cc`). When neither works the
//! fixture-dependent tests print a SKIP line and return early.

#![allow(dead_code)]

use std::path::PathBuf;
use std::process::Command;
use std::sync::OnceLock;

use ffibridge::LibraryHandle;

const SOURCE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixture/ffib_fixture.c");

struct Built {
    path: PathBuf,
    _dir: Option<tempfile::TempDir>,
}

static FIXTURE: OnceLock<Result<Built, String>> = OnceLock::new();

fn build() -> Result<Built, String> {
    if let Some(path) = std::env::var_os("FFIB_FIXTURE_LIB") {
        return Ok(Built {
            path: path.into(),
            _dir: None,
        });
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("libffib_fixture.so");
    let status = Command::new(&cc)
        .args(["-shared", "-fPIC", "-O1", "-ffp-contract=off", "-o"])
        .arg(&out)
        .arg(SOURCE)
        .output()
        .map_err(|e| format!("compiler `{cc}` unavailable: {e}"))?;
    if !status.status.success() {
        return Err(format!(
            "fixture compile failed: {}",
            String::from_utf8_lossy(&status.stderr)
        ));
    }
    Ok(Built {
        path: out,
        _dir: Some(dir),
    })
}

pub fn fixture_path() -> Option<PathBuf> {
    match FIXTURE.get_or_init(build) {
        Ok(b) => Some(b.path.clone()),
        Err(e) => {
            eprintln!("SKIP: abi fixture unavailable ({e})");
            None
        }
    }
}

/// Opens the fixture, or reports a skip for `test`.
pub fn fixture(test: &str) -> Option<LibraryHandle> {
    let Some(path) = fixture_path() else {
        eprintln!("SKIP: {test} needs the abi fixture");
        return None;
    };
    Some(LibraryHandle::open("ffib_fixture", Some(&path)).expect("fixture loads"))
}
