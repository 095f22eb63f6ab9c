//! Multimodal dense-retrieval core.
//!
//! A desk-scale bi-encoder (token or frame inputs, one attention layer with a
//! causal/bidirectional switch, mean pooling, LoRA-adapted projection),
//! early and late fusion of audio/video streams, exact top-k search, NDCG and
//! recall, hard-negative mining, InfoNCE training of the LoRA factors,
//! sequence-length budgeting, and synthetic benchmark generators.
//!
//! The crate is `no_std` and only needs `alloc`. File formats and the
//! command-line tool live in the `omniret` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod budget;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod linalg;
pub mod math;
pub mod media;
pub mod metrics;
pub mod mining;
pub mod retrieval;
pub mod rng;
pub mod store;
pub mod synth;
pub mod training;
pub mod vector;

pub use encoder::{Encoder, EncoderConfig, EncoderWeights, LoraConfig, MaskMode};
pub use error::{Error, Result};
pub use fusion::{Combiner, FusionStrategy};
pub use media::{Frame, MediaItem, Modality, Stream};
pub use metrics::{MetricReport, Qrels};
pub use retrieval::{RunResult, ScoredHit};
pub use store::EmbeddingStore;
pub use vector::{Embedding, SimilarityFn};
