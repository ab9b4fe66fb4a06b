//! Error type shared across the crate.

use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    #[error("sequence length {len} exceeds context length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("position {pos} out of range for sequence of length {len}")]
    PositionOutOfRange { pos: usize, len: usize },
    #[error("layer {layer} out of range for model with {count} layers")]
    LayerOutOfRange { layer: usize, count: usize },
    #[error("token id {id} outside vocabulary of size {size}")]
    TokenOutOfVocab { id: u32, size: usize },
    #[error("trace is stale: model parameters changed since the forward pass")]
    StaleTrace,
    #[error("knowledge slots are empty; sequences must carry slot annotations")]
    EmptyKnowledgeSlots,
    #[error("masked variant does not derive from the given sequence")]
    MaskMismatch,
    #[error("length mismatch: {0}")]
    LengthMismatch(&'static str),
    #[error("invalid {name}: {reason}")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },
    #[error("reference parameters required but none are frozen")]
    MissingReference,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("fine-tuning did not converge: {0}")]
    NonConvergence(String),
    #[error("invalid sequence: {0}")]
    InvalidSequence(&'static str),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(&'static str),
}

pub type Result<T> = core::result::Result<T, CoreError>;
