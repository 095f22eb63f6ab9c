//! InfoNCE training of the LoRA factors.
//!
//! Only `A` and `B` of the projection are trainable, so everything before
//! the projection (lookup, attention, pooling) is computed once per item and
//! reused. Gradients are derived by hand through the projection and the L2
//! normalization and are checked against central finite differences in the
//! tests.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math;
use crate::media::{MediaItem, Stream};
use crate::metrics::Qrels;
use crate::mining::{mine_hard_negatives, MiningConfig, TrainingTriple};
use crate::rng;
use crate::vector::{similarity, Embedding, SimilarityFn};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub temperature: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub in_batch_negatives: bool,
    pub seed: u64,
    pub mining: MiningConfig,
    pub similarity: SimilarityFn,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            temperature: 0.05,
            learning_rate: 0.05,
            epochs: 10,
            batch_size: 8,
            in_batch_negatives: true,
            seed: 0,
            mining: MiningConfig::default(),
            similarity: SimilarityFn::Cosine,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidConfig("temperature must be positive".to_string()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".to_string()));
        }
        if self.batch_size == 0 || (self.in_batch_negatives && self.batch_size < 2) {
            return Err(Error::InvalidConfig(
                "batch size must be at least 2 with in-batch negatives".to_string(),
            ));
        }
        self.mining.validate()
    }
}

/// `-log softmax₀` over `[positive, negatives...] / τ`, computed with the max shift.
pub fn infonce_from_scores(positive: f64, negatives: &[f64], temperature: f64) -> f64 {
    let mut logits = Vec::with_capacity(negatives.len() + 1);
    logits.push(positive / temperature);
    logits.extend(negatives.iter().map(|s| s / temperature));
    loss_from_logits(&logits)
}

/// `-log softmax(logits)[0]`, accurate both when the positive dominates
/// (loss near 0) and when a negative does.
fn loss_from_logits(logits: &[f64]) -> f64 {
    let l0 = logits[0];
    let top = logits[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let loss = if top <= l0 {
        // every term is ≤ 1, so no overflow, and ln_1p keeps tiny losses exact
        math::ln_1p(logits[1..].iter().map(|l| math::exp(l - l0)).fold(0.0, |a, b| a + b))
    } else {
        math::log_sum_exp(logits) - l0
    };
    loss.max(0.0)
}

/// InfoNCE loss of one query against its positive and negatives.
pub fn infonce_loss(
    query: &Embedding,
    positive: &Embedding,
    negatives: &[Embedding],
    temperature: f64,
    func: SimilarityFn,
) -> Result<f64> {
    let pos = similarity(query, positive, func)?;
    let negs = negatives
        .iter()
        .map(|n| similarity(query, n, func))
        .collect::<Result<Vec<_>>>()?;
    Ok(infonce_from_scores(pos, &negs, temperature))
}

/// One query with its positive and negatives, as encoder inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchExample {
    pub query: Stream,
    pub positive: MediaItem,
    pub negatives: Vec<MediaItem>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub examples: Vec<BatchExample>,
}

/// An example reduced to pooled (pre-projection) vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledExample {
    pub query: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

impl Batch {
    pub fn pooled(&self, encoder: &Encoder) -> Result<Vec<PooledExample>> {
        self.examples
            .iter()
            .map(|ex| {
                Ok(PooledExample {
                    query: encoder.pooled_stream(&ex.query)?,
                    positive: encoder.pooled_item(&ex.positive)?,
                    negatives: ex
                        .negatives
                        .iter()
                        .map(|n| encoder.pooled_item(n))
                        .collect::<Result<_>>()?,
                })
            })
            .collect()
    }
}

/// Gradients with respect to the LoRA factors.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraGrad {
    pub a: Matrix,
    pub b: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grad: LoraGrad,
}

/// Forward state of one projected, normalized vector.
struct Projected {
    pooled_a: Vec<f64>,
    unit: Vec<f64>,
    norm: f64,
}

fn project(encoder: &Encoder, pooled: &[f64]) -> Projected {
    let w = encoder.weights();
    let pooled_a = w.lora_a.mul_vec(pooled);
    let z = encoder.project(pooled);
    let norm = math::norm_f64(&z);
    let unit = z.iter().map(|v| v / norm).collect();
    Projected {
        pooled_a,
        unit,
        norm,
    }
}

/// Accumulates the gradient of `g · e` where `e = z/‖z‖` and `z` is the
/// projection of `pooled`.
fn backprop(encoder: &Encoder, pooled: &[f64], fwd: &Projected, grad_unit: &[f64], out: &mut LoraGrad) {
    let w = encoder.weights();
    let s = w.lora_scaling;
    // d(z/|z|) = (I - e eᵀ) dz / |z|
    let along = math::dot_f64(&fwd.unit, grad_unit);
    let grad_z: Vec<f64> = grad_unit
        .iter()
        .zip(&fwd.unit)
        .map(|(g, e)| (g - e * along) / fwd.norm)
        .collect();
    // z = W p + s B (A p)
    out.b.add_outer(s, &grad_z, &fwd.pooled_a);
    let bt_gz = w.lora_b.mul_vec_transposed(&grad_z);
    out.a.add_outer(s, &bt_gz, pooled);
}

/// Mean InfoNCE loss over pooled examples at the encoder's current LoRA factors.
pub fn pooled_batch_loss(examples: &[PooledExample], encoder: &Encoder, temperature: f64) -> f64 {
    let mut total = 0.0;
    for ex in examples {
        let q = project(encoder, &ex.query).unit;
        let pos = math::dot_f64(&q, &project(encoder, &ex.positive).unit);
        let negs: Vec<f64> = ex
            .negatives
            .iter()
            .map(|n| math::dot_f64(&q, &project(encoder, n).unit))
            .collect();
        total += infonce_from_scores(pos, &negs, temperature);
    }
    total / examples.len().max(1) as f64
}

/// Mean loss and its exact gradient with respect to `A` and `B`.
pub fn pooled_loss_and_grad(
    examples: &[PooledExample],
    encoder: &Encoder,
    temperature: f64,
) -> LossAndGrad {
    let w = encoder.weights();
    let mut grad = LoraGrad {
        a: Matrix::zeros(w.lora_a.rows(), w.lora_a.cols()),
        b: Matrix::zeros(w.lora_b.rows(), w.lora_b.cols()),
    };
    let mut total = 0.0;
    for ex in examples {
        let q = project(encoder, &ex.query);
        let docs: Vec<(&[f64], Projected)> = core::iter::once(ex.positive.as_slice())
            .chain(ex.negatives.iter().map(Vec::as_slice))
            .map(|p| (p, project(encoder, p)))
            .collect();
        let logits: Vec<f64> = docs
            .iter()
            .map(|(_, d)| math::dot_f64(&q.unit, &d.unit) / temperature)
            .collect();
        let lse = math::log_sum_exp(&logits);
        total += loss_from_logits(&logits);
        // dL/dsim_i = (softmax_i - [i == 0]) / τ
        let coeffs: Vec<f64> = logits
            .iter()
            .enumerate()
            .map(|(i, l)| (math::exp(l - lse) - if i == 0 { 1.0 } else { 0.0 }) / temperature)
            .collect();
        let mut grad_q = vec![0.0; q.unit.len()];
        for (c, (_, d)) in coeffs.iter().zip(&docs) {
            for (g, e) in grad_q.iter_mut().zip(&d.unit) {
                *g += c * e;
            }
        }
        backprop(encoder, &ex.query, &q, &grad_q, &mut grad);
        for (c, (pooled, d)) in coeffs.iter().zip(&docs) {
            let grad_d: Vec<f64> = q.unit.iter().map(|e| c * e).collect();
            backprop(encoder, pooled, d, &grad_d, &mut grad);
        }
    }
    let n = examples.len().max(1) as f64;
    for v in grad.a.data_mut().iter_mut().chain(grad.b.data_mut().iter_mut()) {
        *v /= n;
    }
    LossAndGrad {
        loss: total / n,
        grad,
    }
}

/// Mean batch loss and its gradient with respect to the LoRA factors only.
///
/// Similarities are taken between normalized embeddings, where cosine and
/// dot coincide, so `cfg.similarity` does not change the result.
pub fn infonce_grad(batch: &Batch, encoder: &Encoder, cfg: &TrainConfig) -> Result<LossAndGrad> {
    if batch.examples.is_empty() {
        return Err(Error::InvalidConfig("empty batch".to_string()));
    }
    let pooled = batch.pooled(encoder)?;
    Ok(pooled_loss_and_grad(&pooled, encoder, cfg.temperature))
}

/// Plain gradient-descent step on `A` and `B`.
pub fn sgd_step(encoder: &mut Encoder, grad: &LoraGrad, learning_rate: f64) {
    let w = encoder.weights_mut();
    w.lora_a.axpy(-learning_rate, &grad.a);
    w.lora_b.axpy(-learning_rate, &grad.b);
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLoss {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

/// Mining outcome of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMining {
    pub epoch: usize,
    pub triples: Vec<TrainingTriple>,
    /// Queries whose positive scored ≤ 0, mined without the threshold.
    pub degenerate_queries: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: Encoder,
    pub trace: Vec<StepLoss>,
    pub mining: Vec<EpochMining>,
}

impl TrainOutcome {
    /// Mean step loss of each epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for s in &self.trace {
            let e = sums.entry(s.epoch).or_insert((0.0, 0));
            e.0 += s.loss;
            e.1 += 1;
        }
        sums.values().map(|(s, n)| s / *n as f64).collect()
    }
}

struct PreparedQuery<'a> {
    id: &'a str,
    pooled: Vec<f64>,
    positive: usize,
    relevant: BTreeSet<usize>,
}

/// Mines hard negatives for each query against the current corpus embeddings.
pub fn mine_epoch(
    queries: &[(&str, Embedding, usize, &BTreeSet<usize>)],
    corpus_ids: &[&str],
    corpus: &[Embedding],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochMining> {
    let mut triples = Vec::with_capacity(queries.len());
    let mut degenerate = Vec::new();
    for (qid, q, pos, relevant) in queries {
        let candidates: Vec<(&str, Embedding)> = corpus_ids
            .iter()
            .zip(corpus)
            .enumerate()
            .filter(|(j, _)| !relevant.contains(j))
            .map(|(_, (id, e))| (*id, e.clone()))
            .collect();
        let mined = mine_hard_negatives(q, &corpus[*pos], &candidates, &cfg.mining, cfg.similarity)?;
        if mined.degenerate {
            degenerate.push(qid.to_string());
        }
        triples.push(TrainingTriple::new(*qid, corpus_ids[*pos], mined.negative_ids)?);
    }
    Ok(EpochMining {
        epoch,
        triples,
        degenerate_queries: degenerate,
    })
}

/// Trains the LoRA factors of `encoder` on `queries` against `corpus`.
///
/// Each epoch re-embeds the corpus, mines hard negatives per query, shuffles
/// the queries with a seeded generator and takes one SGD step per batch. A
/// query's negatives are its mined negatives plus, when enabled, the other
/// positives of its batch, minus anything judged relevant to it.
pub fn train(
    mut encoder: Encoder,
    corpus: &[MediaItem],
    queries: &[MediaItem],
    qrels: &Qrels,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let index: BTreeMap<&str, usize> = corpus.iter().enumerate().map(|(i, d)| (d.id(), i)).collect();
    if index.len() != corpus.len() {
        return Err(Error::InvalidConfig("corpus ids must be unique".to_string()));
    }
    let mut missing = Vec::new();
    let mut prepared = Vec::with_capacity(queries.len());
    for q in queries {
        let positive = qrels.best_positive(q.id()).and_then(|p| index.get(p).copied());
        match positive {
            Some(positive) => {
                let relevant = qrels
                    .relevant(q.id())
                    .into_iter()
                    .filter_map(|d| index.get(d).copied())
                    .collect();
                prepared.push(PreparedQuery {
                    id: q.id(),
                    pooled: encoder.pooled_item(q)?,
                    positive,
                    relevant,
                });
            }
            None => missing.push(q.id().to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::NoPositive(missing));
    }
    let mut outcome = TrainOutcome {
        encoder: encoder.clone(),
        trace: Vec::new(),
        mining: Vec::new(),
    };
    if cfg.epochs == 0 || prepared.is_empty() {
        return Ok(outcome);
    }
    let corpus_pooled = corpus
        .iter()
        .map(|d| encoder.pooled_item(d))
        .collect::<Result<Vec<_>>>()?;
    let corpus_ids: Vec<&str> = corpus.iter().map(MediaItem::id).collect();

    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let corpus_emb = corpus_pooled
            .iter()
            .map(|p| encoder.embed_pooled(p))
            .collect::<Result<Vec<_>>>()?;
        let query_emb = prepared
            .iter()
            .map(|q| Ok((q.id, encoder.embed_pooled(&q.pooled)?, q.positive, &q.relevant)))
            .collect::<Result<Vec<_>>>()?;
        let mined = mine_epoch(&query_emb, &corpus_ids, &corpus_emb, cfg, epoch)?;

        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut rng::derive_indexed(cfg.seed, "train.shuffle", epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let examples: Vec<PooledExample> = chunk
                .iter()
                .map(|&qi| {
                    let q = &prepared[qi];
                    let mut negs: Vec<usize> = mined.triples[qi]
                        .negative_ids
                        .iter()
                        .map(|id| index[id.as_str()])
                        .collect();
                    if cfg.in_batch_negatives {
                        for &other in chunk {
                            negs.push(prepared[other].positive);
                        }
                    }
                    let mut seen = BTreeSet::new();
                    negs.retain(|j| !q.relevant.contains(j) && seen.insert(*j));
                    PooledExample {
                        query: q.pooled.clone(),
                        positive: corpus_pooled[q.positive].clone(),
                        negatives: negs.iter().map(|&j| corpus_pooled[j].clone()).collect(),
                    }
                })
                .collect();
            let lg = pooled_loss_and_grad(&examples, &encoder, cfg.temperature);
            if !lg.loss.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "loss diverged at step {step}; lower the learning rate"
                )));
            }
            sgd_step(&mut encoder, &lg.grad, cfg.learning_rate);
            outcome.trace.push(StepLoss {
                step,
                epoch,
                loss: lg.loss,
            });
            step += 1;
        }
        outcome.mining.push(mined);
    }
    outcome.encoder = encoder;
    Ok(outcome)
}
