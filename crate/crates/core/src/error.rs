use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the engine, the layers and the models.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("non-finite value at coordinate {index}: {what}")]
    NonFinite { index: usize, what: &'static str },
    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("could not place {0} objects without overlap")]
    Placement(usize),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Error {
    Error::InvalidArgument { op, msg: msg.into() }
}
