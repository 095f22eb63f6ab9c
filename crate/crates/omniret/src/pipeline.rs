//! End-to-end steps shared by the command-line tool and the tests:
//! embedding a corpus, encoding queries, batch search, evaluation under
//! modality settings and the fusion ablation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use omniret_core::encoder::FUSED_LABEL;
use omniret_core::metrics::evaluate_run;
use omniret_core::retrieval::search_documents;
use omniret_core::store::DocumentView;
use omniret_core::{
    Combiner, EmbeddingStore, Embedding, Encoder, FusionStrategy, MediaItem, MetricReport, Modality,
    Qrels, RunResult, SimilarityFn,
};
use rayon::prelude::*;

use crate::error::{AppError, Result};
use crate::report::{Delta, Report, ReportRow};

/// Which embeddings `embed` writes for multi-stream documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedMode {
    Interleaved,
    Separate,
    /// Per-stream entries plus a fused entry.
    Both,
}

impl EmbedMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EmbedMode::Interleaved => "interleaved",
            EmbedMode::Separate => "separate",
            EmbedMode::Both => "both",
        }
    }
}

impl FromStr for EmbedMode {
    type Err = AppError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interleaved" => Ok(EmbedMode::Interleaved),
            "separate" => Ok(EmbedMode::Separate),
            "both" => Ok(EmbedMode::Both),
            _ => Err(AppError::Validation(format!(
                "unknown fusion {s:?} (expected interleaved, separate or both)"
            ))),
        }
    }
}

impl fmt::Display for EmbedMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which store entries represent a document during search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSetting {
    /// Only entries of one modality; documents without it are not candidates.
    Modality(Modality),
    /// The fused entry of multi-stream documents, the sole entry of the rest.
    Fused,
    /// Every per-stream entry, combined by late fusion.
    Separate,
    /// Every entry the store holds.
    All,
}

impl FromStr for EvalSetting {
    type Err = AppError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(EvalSetting::Fused),
            "separate" => Ok(EvalSetting::Separate),
            "all" => Ok(EvalSetting::All),
            m => m.parse::<Modality>().map(EvalSetting::Modality).map_err(|_| {
                AppError::Validation(format!(
                    "unknown setting {s:?} (expected text, image, audio, video, fused, separate or all)"
                ))
            }),
        }
    }
}

impl fmt::Display for EvalSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalSetting::Modality(m) => f.write_str(m.as_str()),
            EvalSetting::Fused => f.write_str("fused"),
            EvalSetting::Separate => f.write_str("separate"),
            EvalSetting::All => f.write_str("all"),
        }
    }
}

pub fn parse_list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, T::Err> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(str::parse).collect()
}

/// Frame width shared by every media stream, or `None` for text-only input.
pub fn infer_input_dim<'a>(items: impl IntoIterator<Item = &'a MediaItem>) -> Result<Option<usize>> {
    let mut width: Option<(usize, &str)> = None;
    for item in items {
        for s in item.streams() {
            if let Some(w) = s.input_dim() {
                match width {
                    None => width = Some((w, item.id())),
                    Some((w0, first)) if w0 != w => {
                        return Err(AppError::Validation(format!(
                            "frame width {w} in {:?} differs from {w0} in {first:?}",
                            item.id()
                        )))
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(width.map(|(w, _)| w))
}

fn encode_for_store(encoder: &Encoder, item: &MediaItem, mode: EmbedMode) -> omniret_core::Result<Vec<(String, Embedding)>> {
    match mode {
        EmbedMode::Interleaved => encoder.encode_item(item, FusionStrategy::Interleaved),
        EmbedMode::Separate => encoder.encode_item(item, FusionStrategy::Separate),
        EmbedMode::Both => {
            let mut out = encoder.encode_item(item, FusionStrategy::Separate)?;
            if item.is_multi_stream() {
                out.extend(encoder.encode_item(item, FusionStrategy::Interleaved)?);
            }
            Ok(out)
        }
    }
}

/// Encodes a corpus in parallel; entries are stored in corpus order.
pub fn embed_corpus(encoder: &Encoder, corpus: &[MediaItem], mode: EmbedMode) -> Result<EmbeddingStore> {
    let encoded: Vec<Vec<(String, Embedding)>> = corpus
        .par_iter()
        .map(|item| {
            encode_for_store(encoder, item, mode)
                .map_err(|e| AppError::Validation(format!("document {:?}: {e}", item.id())))
        })
        .collect::<Result<_>>()?;
    let mut store = EmbeddingStore::new(encoder.dim())?;
    for (item, entries) in corpus.iter().zip(encoded) {
        for (label, e) in entries {
            store.push(item.id(), label, e)?;
        }
    }
    Ok(store)
}

/// One embedding per query; multi-stream queries are fused.
pub fn encode_queries(encoder: &Encoder, queries: &[MediaItem]) -> Result<Vec<(String, Embedding)>> {
    queries
        .par_iter()
        .map(|q| {
            encoder
                .pooled_item(q)
                .and_then(|p| encoder.embed_pooled(&p))
                .map(|e| (q.id().to_string(), e))
                .map_err(|e| AppError::Validation(format!("query {:?}: {e}", q.id())))
        })
        .collect()
}

/// Documents as seen under `setting`.
pub fn setting_view(store: &EmbeddingStore, setting: EvalSetting) -> Result<Vec<DocumentView<'_>>> {
    let docs = match setting {
        EvalSetting::Modality(m) => store.documents_filtered(|l| l == m.as_str()),
        EvalSetting::Separate => store.documents_filtered(|l| l != FUSED_LABEL),
        EvalSetting::All => store.documents(),
        EvalSetting::Fused => {
            let mut docs = store.documents();
            for d in &mut docs {
                if d.streams.iter().any(|(l, _)| *l == FUSED_LABEL) {
                    d.streams.retain(|(l, _)| *l == FUSED_LABEL);
                } else if d.streams.len() > 1 {
                    return Err(AppError::Validation(format!(
                        "document {:?} has no fused embedding; embed with --fusion interleaved or both",
                        d.doc_id
                    )));
                }
            }
            docs
        }
    };
    if docs.is_empty() {
        return Err(AppError::Validation(format!("no document in the store has a {setting} embedding")));
    }
    Ok(docs)
}

pub fn search_all(
    queries: &[(String, Embedding)],
    docs: &[DocumentView<'_>],
    k: usize,
    func: SimilarityFn,
    combiner: Combiner,
) -> Result<RunResult> {
    let hits = queries
        .par_iter()
        .map(|(_, q)| search_documents(q, docs, k, func, combiner))
        .collect::<omniret_core::Result<Vec<_>>>()?;
    let mut run = RunResult::new();
    for ((id, _), h) in queries.iter().zip(hits) {
        run.insert(id.clone(), h)?;
    }
    Ok(run)
}

/// Searches `store` under `setting` and scores the run at every cutoff.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_setting(
    store: &EmbeddingStore,
    queries: &[(String, Embedding)],
    qrels: &Qrels,
    setting: EvalSetting,
    ks: &[usize],
    func: SimilarityFn,
    combiner: Combiner,
) -> Result<(RunResult, MetricReport)> {
    check_dims(store, queries)?;
    let k = ks.iter().copied().max().ok_or_else(|| AppError::Validation("empty --k list".into()))?;
    let docs = setting_view(store, setting)?;
    let run = search_all(queries, &docs, k, func, combiner)?;
    let report = evaluate_run(&run, qrels, ks)?;
    Ok((run, report))
}

pub fn check_dims(store: &EmbeddingStore, queries: &[(String, Embedding)]) -> Result<()> {
    match queries.first() {
        Some((_, q)) if q.dim() != store.dim() => Err(AppError::Validation(format!(
            "query embeddings have dim {} but the store has dim {}",
            q.dim(),
            store.dim()
        ))),
        _ => Ok(()),
    }
}

fn cell(report: &MetricReport) -> BTreeMap<String, f64> {
    report.metrics.iter().map(|m| (m.name.clone(), m.mean)).collect()
}

fn metric_names(report: &MetricReport) -> Vec<String> {
    report.metrics.iter().map(|m| m.name.clone()).collect()
}

/// One row of evaluation results, one column per setting.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_settings(
    row_name: &str,
    store: &EmbeddingStore,
    queries: &[(String, Embedding)],
    qrels: &Qrels,
    settings: &[EvalSetting],
    ks: &[usize],
    func: SimilarityFn,
    combiner: Combiner,
) -> Result<Report> {
    let mut report = Report::new(format!("retrieval ({combiner} late fusion)"));
    let mut cells = Vec::new();
    for &s in settings {
        let (_, r) = evaluate_setting(store, queries, qrels, s, ks, func, combiner)?;
        if report.metrics.is_empty() {
            report.metrics = metric_names(&r);
            report.excluded_queries = r.excluded_queries.clone();
        }
        report.columns.push(s.to_string());
        cells.push(Some(cell(&r)));
    }
    report.rows.push(ReportRow {
        name: row_name.to_string(),
        cells,
    });
    Ok(report)
}

/// Text, audio and video alone, interleaved fusion, and separate encoding
/// under each combiner, evaluated in one pass, with each separate variant's
/// gain over fusion.
pub fn ablate_fusion(
    row_name: &str,
    encoder: &Encoder,
    corpus: &[MediaItem],
    queries: &[MediaItem],
    qrels: &Qrels,
    ks: &[usize],
    func: SimilarityFn,
) -> Result<Report> {
    if !corpus.iter().any(MediaItem::is_multi_stream) {
        return Err(AppError::Validation(
            "fusion ablation needs at least one document with two or more streams; \
             with single-stream documents every setting is identical"
                .into(),
        ));
    }
    let store = embed_corpus(encoder, corpus, EmbedMode::Both)?;
    let q = encode_queries(encoder, queries)?;
    let mut report = Report::new("fusion ablation".to_string());
    let mut cells = Vec::new();
    let mut push = |report: &mut Report, name: String, r: Option<MetricReport>| {
        if let Some(r) = &r {
            if report.metrics.is_empty() {
                report.metrics = metric_names(r);
                report.excluded_queries = r.excluded_queries.clone();
            }
        }
        report.columns.push(name);
        cells.push(r.as_ref().map(cell));
    };
    for m in [Modality::Text, Modality::Audio, Modality::Video] {
        let present = store.entries().iter().any(|e| e.label == m.as_str());
        let r = if present {
            Some(evaluate_setting(&store, &q, qrels, EvalSetting::Modality(m), ks, func, Combiner::Max)?.1)
        } else {
            None
        };
        push(&mut report, m.as_str().to_string(), r);
    }
    let (_, fr) = evaluate_setting(&store, &q, qrels, EvalSetting::Fused, ks, func, Combiner::Max)?;
    let fused = cell(&fr);
    push(&mut report, "fused".to_string(), Some(fr));
    let mut separate = Vec::new();
    for c in Combiner::ALL {
        let (_, r) = evaluate_setting(&store, &q, qrels, EvalSetting::Separate, ks, func, c)?;
        separate.push((c, cell(&r)));
        push(&mut report, format!("separate-{c}"), Some(r));
    }
    for (c, s) in separate {
        report.deltas.push(Delta {
            name: format!("separate-{c} - fused"),
            values: s.iter().map(|(m, v)| (m.clone(), v - fused[m])).collect(),
        });
    }
    report.rows.push(ReportRow {
        name: row_name.to_string(),
        cells,
    });
    Ok(report)
}
