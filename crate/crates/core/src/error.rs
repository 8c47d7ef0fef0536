use thiserror::Error;

use crate::headers::Field;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("value {value} does not fit in field {field} ({width} bits)")]
    WidthOverflow { field: &'static str, width: u32, value: u64 },
    #[error("expected {expected} header fields, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("unknown header field `{0}`")]
    UnknownField(String),
    #[error("field {0:?} is not modifiable under the active field policy")]
    FieldNotModifiable(Field),
    #[error("action is singular (zero diagonal entry) and has no inverse")]
    SingularAction,
    #[error("singular action in table entry {index}")]
    SingularEntry { index: usize },
    #[error("no entry with the given rule")]
    NotFound,
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("service chain has no stages")]
    EmptyChain,
    #[error("unresolved port reference `{0}`")]
    UnresolvedPort(String),
    #[error("scenario error: {0}")]
    Scenario(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
