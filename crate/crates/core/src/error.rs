use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("index {index} out of range for {what} of length {len}")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite {component} at epoch {epoch}: {value}")]
    NonFinite {
        component: &'static str,
        epoch: usize,
        value: f64,
    },
    #[error("negative sampling saturated after {attempts} attempts for pair ({d1}, {d2}, {t})")]
    Saturated {
        attempts: usize,
        d1: usize,
        d2: usize,
        t: usize,
    },
    #[error("parameter `{name}`: {detail}")]
    Parameter { name: String, detail: String },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
