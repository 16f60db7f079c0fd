//! Library half of the `cmgn` binary: config schema, the gradient-check
//! harness, and the subcommand implementations. Split out so integration
//! tests can drive commands without spawning a process.

pub mod commands;
pub mod config;
pub mod gradcheck;

use cmgn_core::{Error, ErrorCategory};

/// Process exit code for an error: 1 validation, 2 numerical, 3 I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err.category() {
        ErrorCategory::Validation => 1,
        ErrorCategory::Numerical => 2,
        ErrorCategory::Io => 3,
    }
}
