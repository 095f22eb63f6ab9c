//! Corpus, query and judgment files, the binary embedding store, run and
//! triple files, trained-weight files and loss traces.
//!
//! Line-oriented formats are JSON lines. Blank lines are skipped, so a
//! trailing newline (or its absence) never changes what is loaded. Every
//! parse error carries the 1-based line number.
//!
//! Corpus and query records:
//!
//! ```text
//! {"id": "d1", "text": "a short caption"}
//! {"id": "d2", "streams": [
//!     {"modality": "text", "token_ids": [4, 17]},
//!     {"modality": "audio", "timeline": [{"t": 0.0, "frame": [0.1, 0.2]}]},
//!     {"modality": "video", "timeline": [{"t": 0.0, "frame": [0.3, 0.4]}]}]}
//! ```
//!
//! A text stream holds either `token_ids` or raw `text`, which is tokenized
//! at load time with the encoder's tokenizer.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use omniret_core::encoder::tokenize;
use omniret_core::linalg::Matrix;
use omniret_core::mining::TrainingTriple;
use omniret_core::retrieval::ScoredHit;
use omniret_core::training::StepLoss;
use omniret_core::{
    EmbeddingStore, Embedding, Encoder, EncoderConfig, Frame, LoraConfig, MaskMode, MediaItem,
    Modality, Qrels, RunResult, Stream,
};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const STORE_MAGIC: &[u8; 8] = b"OMNIEMB1";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub t: f64,
    pub frame: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamRecord {
    pub modality: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_ids: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeline: Option<Vec<FrameRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub streams: Option<Vec<StreamRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QrelRecord {
    pub query_id: String,
    pub doc_id: String,
    pub grade: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub query_id: String,
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripleRecord {
    pub query_id: String,
    pub positive_id: String,
    pub negative_ids: Vec<String>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| AppError::io(path, e))
}

/// Parses every non-blank line of `path` as `T`, yielding `(line_number, record)`.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| AppError::parse(path, i + 1, e.to_string()))?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and a rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| AppError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| AppError::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| AppError::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| AppError::io(path, e.error))?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| AppError::Internal(e.to_string()))?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

fn stream_from_record(rec: StreamRecord, vocab_size: u32) -> std::result::Result<Stream, String> {
    let modality: Modality = rec.modality.parse().map_err(|e: omniret_core::Error| e.to_string())?;
    match modality {
        Modality::Text => {
            if rec.timeline.is_some() {
                return Err("text stream cannot have a timeline".into());
            }
            match (rec.token_ids, rec.text) {
                (Some(ids), None) => Ok(Stream::text(ids)),
                (None, Some(text)) => Ok(Stream::text(tokenize(&text, vocab_size))),
                _ => Err("text stream needs exactly one of token_ids or text".into()),
            }
        }
        m => {
            if rec.token_ids.is_some() || rec.text.is_some() {
                return Err(format!("{m} stream takes a timeline, not tokens"));
            }
            let timeline = rec.timeline.ok_or_else(|| format!("{m} stream needs a timeline"))?;
            let frames = timeline.into_iter().map(|f| Frame::new(f.t, f.frame)).collect();
            Stream::media(m, frames).map_err(|e| e.to_string())
        }
    }
}

fn item_from_record(rec: ItemRecord, vocab_size: u32) -> std::result::Result<MediaItem, String> {
    let streams = match (rec.text, rec.streams) {
        (Some(text), None) => vec![Stream::text(tokenize(&text, vocab_size))],
        (None, Some(streams)) => streams
            .into_iter()
            .map(|s| stream_from_record(s, vocab_size))
            .collect::<std::result::Result<_, _>>()?,
        _ => return Err("record needs exactly one of text or streams".into()),
    };
    MediaItem::new(rec.id, streams).map_err(|e| e.to_string())
}

pub fn item_to_record(item: &MediaItem) -> ItemRecord {
    let streams = item
        .streams()
        .iter()
        .map(|s| StreamRecord {
            modality: s.modality().as_str().to_string(),
            token_ids: s.token_ids().map(<[u32]>::to_vec),
            text: None,
            timeline: s.timeline().map(|t| {
                t.iter()
                    .map(|f| FrameRecord {
                        t: f.timestamp_s,
                        frame: f.features.clone(),
                    })
                    .collect()
            }),
        })
        .collect();
    ItemRecord {
        id: item.id().to_string(),
        text: None,
        streams: Some(streams),
    }
}

/// Loads corpus or query items in file order. Ids must be unique.
pub fn load_items(path: &Path, vocab_size: u32) -> Result<Vec<MediaItem>> {
    let mut seen = BTreeSet::new();
    let mut items = Vec::new();
    for (line, rec) in read_jsonl::<ItemRecord>(path)? {
        let item = item_from_record(rec, vocab_size).map_err(|m| AppError::parse(path, line, m))?;
        if !seen.insert(item.id().to_string()) {
            return Err(AppError::parse(path, line, format!("duplicate id {:?}", item.id())));
        }
        items.push(item);
    }
    Ok(items)
}

pub fn load_corpus(path: &Path, vocab_size: u32) -> Result<Vec<MediaItem>> {
    load_items(path, vocab_size)
}

pub fn load_queries(path: &Path, vocab_size: u32) -> Result<Vec<MediaItem>> {
    load_items(path, vocab_size)
}

pub fn write_items(path: &Path, items: &[MediaItem]) -> Result<()> {
    let records: Vec<ItemRecord> = items.iter().map(item_to_record).collect();
    write_jsonl(path, &records)
}

/// Loads judgments; a repeated (query, doc) pair is an error.
pub fn load_qrels(path: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    let mut seen = BTreeSet::new();
    for (line, r) in read_jsonl::<QrelRecord>(path)? {
        if !seen.insert((r.query_id.clone(), r.doc_id.clone())) {
            return Err(AppError::parse(
                path,
                line,
                format!("duplicate judgment for ({:?}, {:?})", r.query_id, r.doc_id),
            ));
        }
        qrels.insert(r.query_id, r.doc_id, r.grade);
    }
    Ok(qrels)
}

pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<()> {
    let records: Vec<QrelRecord> = qrels
        .iter()
        .flat_map(|(q, docs)| {
            docs.iter().map(move |(d, g)| QrelRecord {
                query_id: q.to_string(),
                doc_id: d.clone(),
                grade: *g,
            })
        })
        .collect();
    write_jsonl(path, &records)
}

/// Serializes a store: magic, u32 version, u32 dim, u64 count, then per
/// entry u16-prefixed UTF-8 doc id and label followed by `dim` f32 values,
/// all little-endian.
pub fn encode_store(store: &EmbeddingStore) -> std::result::Result<Vec<u8>, String> {
    let mut buf = Vec::with_capacity(24 + store.len() * (8 + 4 * store.dim()));
    buf.extend_from_slice(STORE_MAGIC);
    buf.extend_from_slice(&STORE_VERSION.to_le_bytes());
    let dim = u32::try_from(store.dim()).map_err(|_| "dim exceeds u32")?;
    buf.extend_from_slice(&dim.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for e in store.entries() {
        for s in [&e.doc_id, &e.label] {
            let n = u16::try_from(s.len()).map_err(|_| format!("string longer than 65535 bytes: {s:.40}"))?;
            buf.extend_from_slice(&n.to_le_bytes());
            buf.extend_from_slice(s.as_bytes());
        }
        for v in e.embedding.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {} (needed {n} more)", self.pos)),
        }
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u16()? as usize;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| format!("invalid UTF-8 at byte {at}"))
    }
}

/// Inverse of [`encode_store`]. The normalized flag is not on disk; the
/// store derives it from the values on insertion, so it survives the trip.
pub fn decode_store(bytes: &[u8]) -> std::result::Result<EmbeddingStore, String> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8).map_err(|_| "too short for a store header".to_string())? != STORE_MAGIC {
        return Err("bad magic; not an embedding store".into());
    }
    let version = c.u32()?;
    if version != STORE_VERSION {
        return Err(format!("unsupported store version {version} (expected {STORE_VERSION})"));
    }
    let dim = c.u32()? as usize;
    let count = c.u64()?;
    let mut store = EmbeddingStore::new(dim).map_err(|e| e.to_string())?;
    for i in 0..count {
        let doc_id = c.string()?;
        let label = c.string()?;
        let raw = c.take(dim * 4)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let e = Embedding::new(values).map_err(|e| format!("entry {i}: {e}"))?;
        store.push(doc_id, label, e).map_err(|e| format!("entry {i}: {e}"))?;
    }
    if c.pos != bytes.len() {
        return Err(format!("{} trailing bytes after {count} entries", bytes.len() - c.pos));
    }
    Ok(store)
}

pub fn write_store(store: &EmbeddingStore, path: &Path) -> Result<()> {
    let bytes = encode_store(store).map_err(|m| AppError::format(path, m))?;
    write_atomic(path, &bytes)
}

pub fn read_store(path: &Path) -> Result<EmbeddingStore> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode_store(&bytes).map_err(|m| AppError::format(path, m))
}

pub fn run_records(run: &RunResult) -> Vec<RunRecord> {
    run.iter()
        .flat_map(|(q, hits)| {
            hits.iter().map(move |h| RunRecord {
                query_id: q.to_string(),
                doc_id: h.doc_id.clone(),
                rank: h.rank,
                score: h.score,
            })
        })
        .collect()
}

pub fn write_run(path: &Path, run: &RunResult) -> Result<()> {
    write_jsonl(path, &run_records(run))
}

/// Loads a run; each query's records must be contiguous and rank-ordered.
pub fn read_run(path: &Path) -> Result<RunResult> {
    let mut run = RunResult::new();
    let mut current: Option<(String, usize, Vec<ScoredHit>)> = None;
    let finish = |run: &mut RunResult, cur: Option<(String, usize, Vec<ScoredHit>)>| -> Result<()> {
        if let Some((q, line, hits)) = cur {
            if run.get(&q).is_some() {
                return Err(AppError::parse(path, line, format!("records for query {q:?} are not contiguous")));
            }
            run.insert(q, hits).map_err(|e| AppError::parse(path, line, e.to_string()))?;
        }
        Ok(())
    };
    for (line, r) in read_jsonl::<RunRecord>(path)? {
        let hit = ScoredHit {
            doc_id: r.doc_id,
            score: r.score,
            rank: r.rank,
        };
        match &mut current {
            Some((q, _, hits)) if *q == r.query_id => hits.push(hit),
            _ => {
                finish(&mut run, current.take())?;
                current = Some((r.query_id, line, vec![hit]));
            }
        }
    }
    finish(&mut run, current)?;
    Ok(run)
}

pub fn write_triples(path: &Path, triples: &[TrainingTriple]) -> Result<()> {
    let records: Vec<TripleRecord> = triples
        .iter()
        .map(|t| TripleRecord {
            query_id: t.query_id.clone(),
            positive_id: t.positive_id.clone(),
            negative_ids: t.negative_ids.clone(),
        })
        .collect();
    write_jsonl(path, &records)
}

pub fn read_triples(path: &Path) -> Result<Vec<TrainingTriple>> {
    read_jsonl::<TripleRecord>(path)?
        .into_iter()
        .map(|(line, r)| {
            TrainingTriple::new(r.query_id, r.positive_id, r.negative_ids)
                .map_err(|e| AppError::parse(path, line, e.to_string()))
        })
        .collect()
}

pub fn write_loss_csv(path: &Path, trace: &[StepLoss]) -> Result<()> {
    let mut s = String::from("step,loss\n");
    for t in trace {
        s.push_str(&format!("{},{}\n", t.step, t.loss));
    }
    write_atomic(path, s.as_bytes())
}

const WEIGHTS_META: &str = "meta";
const WEIGHTS_A: &str = "lora.a";
const WEIGHTS_B_T: &str = "lora.b_t";

fn meta_label(cfg: &EncoderConfig, lora: &LoraConfig) -> String {
    format!(
        "seed={};vocab_size={};dim={};input_dim={};mask_mode={};rank={};alpha={}",
        cfg.seed, cfg.vocab_size, cfg.dim, cfg.input_dim, cfg.mask_mode, lora.rank, lora.alpha
    )
}

fn parse_meta(label: &str) -> std::result::Result<(EncoderConfig, LoraConfig), String> {
    let mut cfg = EncoderConfig::default();
    let mut lora = LoraConfig::default();
    let mut seen = BTreeSet::new();
    for kv in label.split(';') {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("malformed meta field {kv:?}"))?;
        let bad = |_| format!("bad value for {k}: {v:?}");
        match k {
            "seed" => cfg.seed = v.parse().map_err(bad)?,
            "vocab_size" => cfg.vocab_size = v.parse().map_err(bad)?,
            "dim" => cfg.dim = v.parse().map_err(bad)?,
            "input_dim" => cfg.input_dim = v.parse().map_err(bad)?,
            "mask_mode" => cfg.mask_mode = v.parse::<MaskMode>().map_err(|e| e.to_string())?,
            "rank" => lora.rank = v.parse().map_err(bad)?,
            "alpha" => lora.alpha = v.parse().map_err(|_| format!("bad value for alpha: {v:?}"))?,
            _ => return Err(format!("unknown meta field {k:?}")),
        }
        seen.insert(k);
    }
    if seen.len() != 7 {
        return Err("meta entry is missing fields".into());
    }
    Ok((cfg, lora))
}

/// Stores the encoder's seed, configuration and LoRA factors in the store
/// container: a `meta` entry whose label holds the configuration, the rows
/// of A under `lora.a`, and the rows of Bᵀ under `lora.b_t`. The frozen
/// weights are not written; they are regenerated from the seed.
pub fn weights_to_store(encoder: &Encoder) -> Result<EmbeddingStore> {
    let w = encoder.weights();
    let d = encoder.dim();
    let mut store = EmbeddingStore::new(d)?;
    store.push(WEIGHTS_META, meta_label(encoder.config(), encoder.lora_config()), Embedding::new(vec![0.0; d])?)?;
    for r in 0..w.rank() {
        store.push(WEIGHTS_A, format!("row{r}"), Embedding::from_f64(w.lora_a.row(r))?)?;
    }
    for r in 0..w.rank() {
        let col: Vec<f64> = (0..d).map(|i| w.lora_b.get(i, r)).collect();
        store.push(WEIGHTS_B_T, format!("row{r}"), Embedding::from_f64(&col)?)?;
    }
    Ok(store)
}

pub fn encoder_from_store(store: &EmbeddingStore) -> std::result::Result<Encoder, String> {
    let entries = store.entries();
    let meta = entries
        .iter()
        .find(|e| e.doc_id == WEIGHTS_META)
        .ok_or("no meta entry; not a weights file")?;
    let (cfg, lora) = parse_meta(&meta.label)?;
    if cfg.dim != store.dim() {
        return Err(format!("meta dim {} disagrees with container dim {}", cfg.dim, store.dim()));
    }
    let rows = |name: &str| -> std::result::Result<Vec<&Embedding>, String> {
        (0..lora.rank)
            .map(|r| {
                let label = format!("row{r}");
                entries
                    .iter()
                    .find(|e| e.doc_id == name && e.label == label)
                    .map(|e| &e.embedding)
                    .ok_or_else(|| format!("missing {name} {label}"))
            })
            .collect()
    };
    let d = cfg.dim;
    let mut a = Matrix::zeros(lora.rank, d);
    for (r, e) in rows(WEIGHTS_A)?.into_iter().enumerate() {
        a.row_mut(r).copy_from_slice(&e.to_f64());
    }
    let mut b = Matrix::zeros(d, lora.rank);
    for (r, e) in rows(WEIGHTS_B_T)?.into_iter().enumerate() {
        for (i, v) in e.to_f64().into_iter().enumerate() {
            b.set(i, r, v);
        }
    }
    Encoder::with_lora_factors(cfg, lora, a, b).map_err(|e| e.to_string())
}

pub fn write_weights(path: &Path, encoder: &Encoder) -> Result<()> {
    write_store(&weights_to_store(encoder)?, path)
}

pub fn read_weights(path: &Path) -> Result<Encoder> {
    encoder_from_store(&read_store(path)?).map_err(|m| AppError::format(path, m))
}
