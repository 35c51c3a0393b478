use alloc::string::String;
use core::fmt;

/// Errors raised by the numeric kernels and the inference engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible.
    Shape { op: &'static str, detail: String },
    /// A softmax row in which every entry is the mask sentinel.
    DegenerateRow,
    /// An operation that needs at least one element received none.
    EmptyInput(&'static str),
    /// A [`ModelConfig`](crate::model::ModelConfig) or
    /// [`InterventionSpec`](crate::intervention::InterventionSpec) violates a constraint.
    Config(String),
    /// The sequence would exceed `max_seq_len`.
    Capacity { requested: usize, max: usize },
    /// A token span or layer range lies outside the valid bounds.
    Span(String),
    /// Region segments are malformed or do not cover the positions asked about.
    Segmentation(String),
    /// A token id is outside the vocabulary.
    Token { token: u32, vocab_size: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "shape error in {op}: {detail}"),
            Error::DegenerateRow => write!(f, "degenerate softmax row: every entry is masked"),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::Config(msg) => write!(f, "invalid config: {msg}"),
            Error::Capacity { requested, max } => {
                write!(f, "capacity exceeded: sequence length {requested} > max_seq_len {max}")
            }
            Error::Span(msg) => write!(f, "span error: {msg}"),
            Error::Segmentation(msg) => write!(f, "segmentation error: {msg}"),
            Error::Token { token, vocab_size } => {
                write!(f, "token id {token} out of range for vocab_size {vocab_size}")
            }
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
