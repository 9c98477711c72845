//! Worked examples on top of `ffibridge`: polynomial multiplication through
//! FFTW, a Gauss-Markov linear model solved by LAPACK, and a C function
//! compiled and loaded at run time.

mod error;
pub mod fft;
pub mod glm;
mod interp;
pub mod jit;

pub use error::{Error, Result};

use std::time::Duration;

/// Median of a non-empty sample of durations.
pub(crate) fn median(mut samples: Vec<Duration>) -> Duration {
    samples.sort();
    let mid = samples.len() / 2;
    if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        (samples[mid - 1] + samples[mid]) / 2
    }
}

pub(crate) fn millis(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}
