use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("vector norm is zero")]
    ZeroVector,
    #[error("vector contains NaN or infinite components")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("count mismatch: {left} vs {right}")]
    CountMismatch { left: usize, right: usize },
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("value {value:?} is not in the vocabulary of attribute {attribute}")]
    UnknownValue { attribute: String, value: String },
    #[error("attribute {0} is required")]
    MissingAttribute(&'static str),
    #[error("record id must be non-empty")]
    EmptyId,
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("database is empty")]
    EmptyDatabase,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds database size {count}")]
    KTooLarge { k: usize, count: usize },
    #[error("numerical failure: {0}")]
    NumericalFailure(&'static str),
    #[error("fused embedding cancels to the zero vector")]
    DegenerateFusion,
    #[error("mask shape mismatch: {expected:?} vs {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid mask: {0}")]
    InvalidMask(&'static str),
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("every fusion weight is non-positive")]
    AllWeightsNonPositive,
    #[error("temperature must be positive and finite")]
    NonPositiveTau,
    #[error("operand shape error: {0}")]
    OperandShape(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("no input records")]
    EmptyInput,
    #[error("curation eliminated every record")]
    EmptyAfterCuration,
}
