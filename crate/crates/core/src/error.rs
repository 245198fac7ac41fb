//! Error taxonomy shared by every module in the core.

use alloc::string::String;

/// All failure modes the core distinguishes.
///
/// `Config` covers malformed specs, shape mismatches and out-of-range
/// hyperparameters; `InvalidRequest` covers structurally valid inputs that
/// ask for something impossible (select more filters than exist);
/// `Constraint` covers surgery that would break a model contract (pruning a
/// non-prunable layer, breaking a skip connection); `Training` carries the
/// epoch at which the loss stopped being finite; `Format` carries the byte
/// offset at which decoding a binary artifact failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    Config(String),
    InvalidRequest(String),
    Constraint(String),
    Training { epoch: usize, message: String },
    Format { offset: usize, message: String },
}

impl core::fmt::Display for Error {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::InvalidRequest(m) => write!(f, "invalid request: {m}"),
            Error::Constraint(m) => write!(f, "constraint violation: {m}"),
            Error::Training { epoch, message } => {
                write!(f, "training failure at epoch {epoch}: {message}")
            }
            Error::Format { offset, message } => {
                write!(f, "format error at byte {offset}: {message}")
            }
        }
    }
}

impl core::error::Error for Error {}
