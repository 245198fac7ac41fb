//! Command-line companion to the pruning engine: dataset files, experiment
//! configs, staged pipeline runs, and on-disk artifacts.

pub mod config;
pub mod data;
pub mod parallel;
pub mod pipeline;
pub mod report;
pub mod synth;

use prunesense_core::error::Error;

/// Process exit code for an error: 2 for configuration and request
/// problems, 3 for malformed data files, 4 for failures during training.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidRequest(_) | Error::Constraint(_) => 2,
        Error::Format { .. } => 3,
        Error::Training { .. } => 4,
    }
}
