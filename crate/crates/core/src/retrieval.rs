//! Exact top-k search over an embedding store.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::fusion::{score_document, Combiner};
use crate::store::{DocumentView, EmbeddingStore};
use crate::vector::{Embedding, SimilarityFn};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredHit {
    pub doc_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Ranked hits per query, keyed by query id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunResult {
    queries: BTreeMap<String, Vec<ScoredHit>>,
}

impl RunResult {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a query's hits after checking ranks, score order and doc uniqueness.
    pub fn insert(&mut self, query_id: impl Into<String>, hits: Vec<ScoredHit>) -> Result<()> {
        let query_id = query_id.into();
        let bad = |reason: &str| Error::InvalidConfig(alloc::format!("run for {query_id}: {reason}"));
        let mut seen = alloc::collections::BTreeSet::new();
        for (i, h) in hits.iter().enumerate() {
            if h.rank != i + 1 {
                return Err(bad("ranks must be contiguous from 1"));
            }
            if i > 0 && hits[i - 1].score < h.score {
                return Err(bad("scores must be non-increasing"));
            }
            if !seen.insert(h.doc_id.as_str()) {
                return Err(bad("duplicate doc id"));
            }
        }
        self.queries.insert(query_id, hits);
        Ok(())
    }

    pub fn get(&self, query_id: &str) -> Option<&[ScoredHit]> {
        self.queries.get(query_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[ScoredHit])> {
        self.queries.iter().map(|(q, h)| (q.as_str(), h.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

struct Candidate<'a> {
    score: f64,
    doc_id: &'a str,
}

impl Candidate<'_> {
    /// `Less` means `self` ranks ahead of `other`.
    fn rank_cmp(&self, other: &Self) -> Ordering {
        crate::math::score_cmp(other.score, self.score)
            .then_with(|| self.doc_id.cmp(other.doc_id))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.rank_cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate<'_> {
    // max-heap top = worst retained candidate
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank_cmp(other)
    }
}

/// Top-k over pre-grouped documents. Ties go to the smaller doc id.
pub fn search_documents(
    query: &Embedding,
    docs: &[DocumentView<'_>],
    k: usize,
    func: SimilarityFn,
    combiner: Combiner,
) -> Result<Vec<ScoredHit>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".to_string()));
    }
    if docs.is_empty() {
        return Err(Error::EmptyStore);
    }
    let mut heap: BinaryHeap<Candidate<'_>> = BinaryHeap::with_capacity(k + 1);
    for doc in docs {
        let score = score_document(query, &doc.streams, func, combiner)?;
        let cand = Candidate {
            score,
            doc_id: doc.doc_id,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(worst) = heap.peek() {
            if cand.rank_cmp(worst) == Ordering::Less {
                heap.pop();
                heap.push(cand);
            }
        }
    }
    Ok(heap
        .into_sorted_vec()
        .into_iter()
        .enumerate()
        .map(|(i, c)| ScoredHit {
            doc_id: c.doc_id.to_string(),
            score: c.score,
            rank: i + 1,
        })
        .collect())
}

/// Exact top-k of `store` for `query`, scoring documents by late fusion
/// over their stream embeddings.
pub fn search_topk(
    query: &Embedding,
    store: &EmbeddingStore,
    k: usize,
    func: SimilarityFn,
    combiner: Combiner,
) -> Result<Vec<ScoredHit>> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    if query.dim() != store.dim() {
        return Err(Error::DimensionMismatch {
            expected: store.dim(),
            actual: query.dim(),
        });
    }
    search_documents(query, &store.documents(), k, func, combiner)
}
