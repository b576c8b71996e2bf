use alloc::string::String;
use core::fmt;

/// Errors raised by hpo-core. Every variant carries enough context to
/// locate the offending value without a debugger.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A domain type was constructed with a violated invariant.
    Invalid(String),
    /// Relative advantages need at least two responses.
    GroupTooSmall { len: usize },
    /// Probability-like parameter outside its allowed interval.
    OutOfRange { name: &'static str, value: f64 },
    /// Lengths of parallel arrays disagree.
    ShapeMismatch(String),
    /// A token id does not fit the policy vocabulary.
    TokenOutOfRange { token: u32, vocab_size: usize },
    /// A log-probability or gradient term was NaN or infinite.
    NonFinite {
        group: usize,
        response: usize,
        token: usize,
        what: &'static str,
    },
    /// Inconsistent training configuration.
    Config(String),
    /// Training produced a non-finite quantity; `detail` describes the batch.
    Diverged { step: usize, detail: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Invalid(msg) => write!(f, "invalid value: {msg}"),
            Error::GroupTooSmall { len } => {
                write!(f, "group too small for relative advantage (N = {len}, need >= 2)")
            }
            Error::OutOfRange { name, value } => write!(f, "{name} = {value} is out of range"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::TokenOutOfRange { token, vocab_size } => {
                write!(f, "token id {token} out of range for vocabulary of size {vocab_size}")
            }
            Error::NonFinite {
                group,
                response,
                token,
                what,
            } => write!(
                f,
                "non-finite {what} at group {group}, response {response}, token {token}"
            ),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Diverged { step, detail } => write!(f, "training diverged at step {step}: {detail}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
