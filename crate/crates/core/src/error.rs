use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("state error: {0}")]
    State(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic bytes: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("truncated {what}: needed {needed} bytes, found {found}")]
    Truncated {
        what: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint is missing parameters: {}", .0.join(", "))]
    MissingParameters(Vec<String>),

    #[error("unknown sensor {0:?}")]
    UnknownSensor(String),

    #[error("input too small: {0}")]
    InputTooSmall(String),

    #[error("invalid configuration at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: u64, loss: f64 },
}

impl Error {
    /// Process exit status: 2 invalid input or configuration, 3 I/O and file
    /// format problems, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_)
            | Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::UnknownDtype(_)
            | Error::Format(_)
            | Error::Unsupported(_)
            | Error::VersionMismatch { .. }
            | Error::MissingParameters(_) => 3,
            Error::NonFinite(_) | Error::Divergence { .. } => 4,
            _ => 2,
        }
    }

    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
