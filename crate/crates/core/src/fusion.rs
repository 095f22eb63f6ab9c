//! Stream combination: early (interleaved) fusion of media timelines and
//! late fusion of per-stream similarity scores.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::media::{Frame, Modality, Stream};
use crate::vector::{similarity, Embedding, SimilarityFn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FusionStrategy {
    /// Merge media frames by timestamp into one sequence, encode once.
    Interleaved,
    /// Encode each stream independently and combine scores at query time.
    #[default]
    Separate,
}

impl FusionStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            FusionStrategy::Interleaved => "interleaved",
            FusionStrategy::Separate => "separate",
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interleaved" => Ok(Self::Interleaved),
            "separate" => Ok(Self::Separate),
            other => Err(Error::InvalidConfig(format!(
                "unknown fusion {other:?} (expected interleaved|separate)"
            ))),
        }
    }
}

/// How per-stream similarities of one document reduce to a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Combiner {
    #[default]
    Max,
    Mean,
    Sum,
}

impl Combiner {
    pub const ALL: [Combiner; 3] = [Combiner::Max, Combiner::Mean, Combiner::Sum];

    pub fn as_str(&self) -> &'static str {
        match self {
            Combiner::Max => "max",
            Combiner::Mean => "mean",
            Combiner::Sum => "sum",
        }
    }

    /// Reduces `scores`. The values are sorted first so the result does not
    /// depend on their order.
    pub fn combine(&self, scores: &[f64]) -> Option<f64> {
        if scores.is_empty() {
            return None;
        }
        let mut sorted: Vec<f64> = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        let sum = || sorted.iter().fold(0.0, |acc, s| acc + s);
        Some(match self {
            Combiner::Max => sorted[sorted.len() - 1],
            Combiner::Sum => sum(),
            Combiner::Mean => sum() / sorted.len() as f64,
        })
    }
}

impl fmt::Display for Combiner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Combiner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Self::Max),
            "mean" => Ok(Self::Mean),
            "sum" => Ok(Self::Sum),
            other => Err(Error::InvalidConfig(format!(
                "unknown combiner {other:?} (expected max|mean|sum)"
            ))),
        }
    }
}

/// A frame tagged with the stream it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedFrame {
    pub modality: Modality,
    pub frame: Frame,
}

/// Media frames of several streams merged onto one timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct InterleavedTimeline {
    entries: Vec<TaggedFrame>,
}

impl InterleavedTimeline {
    pub fn entries(&self) -> &[TaggedFrame] {
        &self.entries
    }

    pub fn frames(&self) -> impl Iterator<Item = &Frame> {
        self.entries.iter().map(|e| &e.frame)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Merges media streams into one timeline sorted by timestamp, ties broken
/// by modality priority (audio, video, image) and then by original position.
pub fn interleave(streams: &[&Stream]) -> Result<InterleavedTimeline> {
    if streams.iter().any(|s| s.modality() == Modality::Text) {
        return Err(Error::TextInterleave);
    }
    if streams.len() < 2 {
        return Err(Error::TooFewStreams(streams.len()));
    }
    let mut width = None;
    let mut entries = Vec::new();
    for s in streams {
        let timeline = s.timeline().ok_or(Error::TextInterleave)?;
        if let Some(w) = s.input_dim() {
            match width {
                None => width = Some(w),
                Some(prev) if prev != w => {
                    return Err(Error::DimensionMismatch {
                        expected: prev,
                        actual: w,
                    })
                }
                _ => {}
            }
        }
        entries.extend(timeline.iter().map(|f| TaggedFrame {
            modality: s.modality(),
            frame: f.clone(),
        }));
    }
    // stable sort keeps within-stream order for equal keys
    entries.sort_by(|a, b| {
        a.frame
            .timestamp_s
            .total_cmp(&b.frame.timestamp_s)
            .then(a.modality.interleave_priority().cmp(&b.modality.interleave_priority()))
    });
    Ok(InterleavedTimeline { entries })
}

/// Late-fusion score of a query against a document's per-stream embeddings.
pub fn score_document<L>(
    query: &Embedding,
    doc: &[(L, &Embedding)],
    func: SimilarityFn,
    combiner: Combiner,
) -> Result<f64> {
    if doc.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let mut sims = Vec::with_capacity(doc.len());
    for (_, e) in doc {
        sims.push(similarity(query, e, func)?);
    }
    combiner.combine(&sims).ok_or(Error::EmptyDocument)
}
