//! In-memory embedding store: one entry per (document, stream label).

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::vector::Embedding;

#[derive(Debug, Clone, PartialEq)]
pub struct StoreEntry {
    pub doc_id: String,
    pub label: String,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    entries: Vec<StoreEntry>,
    keys: BTreeSet<(String, String)>,
}

/// A document's entries, in store order.
#[derive(Debug, Clone)]
pub struct DocumentView<'a> {
    pub doc_id: &'a str,
    pub streams: Vec<(&'a str, &'a Embedding)>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("store dim must be positive".into()));
        }
        Ok(Self {
            dim,
            entries: Vec::new(),
            keys: BTreeSet::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[StoreEntry] {
        &self.entries
    }

    /// Appends an entry. An embedding within 1e-6 of unit norm is stored
    /// flagged as normalized, so the flag is a function of the values.
    pub fn push(
        &mut self,
        doc_id: impl Into<String>,
        label: impl Into<String>,
        embedding: Embedding,
    ) -> Result<()> {
        let (doc_id, label) = (doc_id.into(), label.into());
        if embedding.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: embedding.dim(),
            });
        }
        if !self.keys.insert((doc_id.clone(), label.clone())) {
            return Err(Error::DuplicateEntry { doc_id, label });
        }
        self.entries.push(StoreEntry {
            doc_id,
            label,
            embedding: embedding.flag_if_unit(),
        });
        Ok(())
    }

    /// Groups entries by document in order of first appearance.
    pub fn documents(&self) -> Vec<DocumentView<'_>> {
        self.documents_filtered(|_| true)
    }

    /// Like [`documents`](Self::documents) keeping only entries whose label passes `keep`.
    /// Documents left with no entries are dropped.
    pub fn documents_filtered<F>(&self, keep: F) -> Vec<DocumentView<'_>>
    where
        F: Fn(&str) -> bool,
    {
        let mut index: alloc::collections::BTreeMap<&str, usize> = Default::default();
        let mut docs: Vec<DocumentView<'_>> = Vec::new();
        for e in &self.entries {
            if !keep(&e.label) {
                continue;
            }
            let slot = *index.entry(e.doc_id.as_str()).or_insert_with(|| {
                docs.push(DocumentView {
                    doc_id: &e.doc_id,
                    streams: Vec::new(),
                });
                docs.len() - 1
            });
            docs[slot].streams.push((&e.label, &e.embedding));
        }
        docs
    }
}
