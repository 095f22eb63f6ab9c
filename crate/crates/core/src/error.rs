use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the retrieval core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroNorm,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("empty embedding")]
    EmptyEmbedding,
    #[error("invalid stream: {0}")]
    InvalidStream(String),
    #[error("invalid item {id}: {reason}")]
    InvalidItem { id: String, reason: String },
    #[error("stream has no tokens or frames to encode")]
    EmptyStream,
    #[error("document has no embeddings")]
    EmptyDocument,
    #[error("embedding store is empty")]
    EmptyStore,
    #[error("duplicate store entry ({doc_id}, {label})")]
    DuplicateEntry { doc_id: String, label: String },
    #[error("text streams cannot be interleaved with media")]
    TextInterleave,
    #[error("interleaving needs at least two media streams, got {0}")]
    TooFewStreams(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("run queries missing from qrels: {}", .0.join(", "))]
    MissingQrels(Vec<String>),
    #[error("queries without a judged positive in the corpus: {}", .0.join(", "))]
    NoPositive(Vec<String>),
    #[error("setting {setting} is inconsistent with the media: {reason}")]
    SettingMismatch { setting: String, reason: String },
    #[error("invalid training triple: {0}")]
    InvalidTriple(String),
}

pub type Result<T> = core::result::Result<T, Error>;
