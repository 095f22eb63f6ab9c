//! Reference implementations and the suites run by `omniret selfcheck`.
//!
//! Each oracle is a direct, unoptimized restatement of a definition: full
//! sorts instead of heaps, explicit formulas instead of shared helpers,
//! finite differences instead of backpropagation.

use std::collections::BTreeMap;

use omniret_core::budget::{estimate_tokens, MediaDescriptor, ProcessorArgs, Setting};
use omniret_core::encoder::{attention_forward, FUSED_LABEL};
use omniret_core::fusion::score_document;
use omniret_core::linalg::Matrix;
use omniret_core::metrics::ndcg_at_k;
use omniret_core::mining::{select_hard_negatives, MiningConfig};
use omniret_core::retrieval::search_topk;
use omniret_core::rng::{self, SeededRng};
use omniret_core::training::{pooled_batch_loss, pooled_loss_and_grad, PooledExample};
use omniret_core::vector::normalize_f64;
use omniret_core::{
    Combiner, EmbeddingStore, Embedding, Encoder, EncoderConfig, Frame, LoraConfig, MaskMode,
    Modality, SimilarityFn, Stream,
};
use rand::seq::SliceRandom;
use rand::RngExt;

use crate::dataio::{decode_store, encode_store};

/// NDCG@k straight from the definition: gains `2^g − 1`, discounts
/// `1 / log2(rank + 1)`, ideal ordering by sorting all grades.
pub fn ndcg_direct(ranked: &[&str], grades: &BTreeMap<String, u32>, k: usize) -> f64 {
    let gain = |g: u32| 2f64.powi(g as i32) - 1.0;
    let disc = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain(grades.get(*d).copied().unwrap_or(0)) * disc(i + 1))
        .sum();
    let mut ideal: Vec<u32> = grades.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &g)| gain(g) * disc(i + 1)).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Scores every document, sorts all of them, truncates.
pub fn brute_force_topk(
    query: &Embedding,
    store: &EmbeddingStore,
    k: usize,
    func: SimilarityFn,
    combiner: Combiner,
) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, f64)> = store
        .documents()
        .iter()
        .map(|d| {
            let s = score_document(query, &d.streams, func, combiner).expect("valid store");
            (d.doc_id.to_string(), s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Filter by `s < p · s⁺` (no filter when `s⁺ ≤ 0`), sort, truncate.
pub fn mining_direct(positive: f64, candidates: &[(String, f64)], p: f64, k: usize) -> Vec<String> {
    let mut kept: Vec<&(String, f64)> = candidates
        .iter()
        .filter(|(_, s)| positive <= 0.0 || *s < p * positive)
        .collect();
    kept.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then_with(|| a.0.cmp(&b.0)));
    kept.into_iter().take(k).map(|(id, _)| id.clone()).collect()
}

/// Central differences of the batch loss with respect to every entry of A and B.
pub fn finite_difference_grad(examples: &[PooledExample], encoder: &Encoder, tau: f64, eps: f64) -> (Matrix, Matrix) {
    let w = encoder.weights();
    let mut ga = Matrix::zeros(w.lora_a.rows(), w.lora_a.cols());
    let mut gb = Matrix::zeros(w.lora_b.rows(), w.lora_b.cols());
    for which in 0..2 {
        let n = if which == 0 { ga.data().len() } else { gb.data().len() };
        for i in 0..n {
            let at = |delta: f64| {
                let mut e = encoder.clone();
                let w = e.weights_mut();
                let m = if which == 0 { &mut w.lora_a } else { &mut w.lora_b };
                m.data_mut()[i] += delta;
                pooled_batch_loss(examples, &e, tau)
            };
            let g = (at(eps) - at(-eps)) / (2.0 * eps);
            if which == 0 {
                ga.data_mut()[i] = g;
            } else {
                gb.data_mut()[i] = g;
            }
        }
    }
    (ga, gb)
}

/// `max |a − b| / max(max |a|, max |b|)`.
pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    let scale = a.max_abs().max(b.max_abs()).max(1e-12);
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn unit(rng: &mut SeededRng, d: usize) -> Embedding {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalize_f64(&v).expect("nonzero")
}

fn check_ndcg(seed: u64, n: usize) -> CheckResult {
    let mut r = rng::derive(seed, "selfcheck.ndcg");
    let mut worst = 0.0f64;
    for _ in 0..n {
        let n_docs = r.random_range(1..=50usize);
        let ids: Vec<String> = (0..n_docs).map(|i| format!("d{i}")).collect();
        let mut grades = BTreeMap::new();
        for id in &ids {
            if r.random_bool(0.3) {
                grades.insert(id.clone(), r.random_range(0..4u32));
            }
        }
        let mut ranked: Vec<&str> = ids.iter().map(String::as_str).collect();
        ranked.shuffle(&mut r);
        for k in [5, 10] {
            worst = worst.max((ndcg_at_k(&ranked, &grades, k) - ndcg_direct(&ranked, &grades, k)).abs());
        }
    }
    CheckResult {
        name: "ndcg",
        passed: worst <= 1e-9,
        detail: format!("{n} instances, max |diff| {worst:.2e}"),
    }
}

fn check_search(seed: u64, n: usize) -> CheckResult {
    let mut r = rng::derive(seed, "selfcheck.search");
    let mut mismatches = 0;
    for _ in 0..n {
        let d = r.random_range(2..8usize);
        let mut store = EmbeddingStore::new(d).expect("d > 0");
        for i in 0..r.random_range(1..=200usize) {
            let streams = r.random_range(1..=3usize);
            for label in ["audio", "video", "text"].iter().take(streams) {
                store.push(format!("d{i:03}"), *label, unit(&mut r, d)).expect("unique");
            }
        }
        let q = unit(&mut r, d);
        let k = r.random_range(1..=20usize);
        for func in [SimilarityFn::Cosine, SimilarityFn::Dot] {
            for c in Combiner::ALL {
                let got: Vec<(String, f64)> = search_topk(&q, &store, k, func, c)
                    .expect("valid")
                    .into_iter()
                    .map(|h| (h.doc_id, h.score))
                    .collect();
                if got != brute_force_topk(&q, &store, k, func, c) {
                    mismatches += 1;
                }
            }
        }
    }
    CheckResult {
        name: "search",
        passed: mismatches == 0,
        detail: format!("{n} stores x 6 scoring modes, {mismatches} mismatches"),
    }
}

fn check_mining(seed: u64, n: usize) -> CheckResult {
    let mut r = rng::derive(seed, "selfcheck.mining");
    let cfg = MiningConfig::default();
    let mut bad = 0;
    for _ in 0..n {
        let pos = r.random_range(-0.2..1.0);
        let cands: Vec<(String, f64)> = (0..r.random_range(0..30usize))
            .map(|i| (format!("d{i:02}"), (r.random_range(-1.0f64..1.0) * 20.0).round() / 20.0))
            .collect();
        let got = select_hard_negatives(pos, &cands, &cfg).expect("valid config");
        let leak = pos > 0.0
            && got
                .negative_ids
                .iter()
                .any(|id| cands.iter().any(|(c, s)| c == id && *s >= cfg.threshold * pos));
        if leak || got.negative_ids != mining_direct(pos, &cands, cfg.threshold, cfg.k) {
            bad += 1;
        }
    }
    CheckResult {
        name: "mining",
        passed: bad == 0,
        detail: format!("{n} instances, {bad} mismatches"),
    }
}

fn check_gradient(seed: u64, n: usize) -> CheckResult {
    let mut r = rng::derive(seed, "selfcheck.gradient");
    let mut worst = 0.0f64;
    for i in 0..n {
        let d = [4usize, 8, 16][i % 3];
        let tau = [0.02, 0.05, 0.5][(i / 3) % 3];
        let cfg = EncoderConfig {
            dim: d,
            input_dim: 3,
            vocab_size: 16,
            seed: seed + i as u64,
            ..Default::default()
        };
        let mut enc = Encoder::new(cfg, LoraConfig::default()).expect("valid");
        for v in enc.weights_mut().lora_b.data_mut() {
            *v = r.random_range(-0.3..0.3);
        }
        let vec_d = |r: &mut SeededRng| (0..d).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let examples: Vec<PooledExample> = (0..2)
            .map(|_| PooledExample {
                query: vec_d(&mut r),
                positive: vec_d(&mut r),
                negatives: (0..3).map(|_| vec_d(&mut r)).collect(),
            })
            .collect();
        let lg = pooled_loss_and_grad(&examples, &enc, tau);
        let (fa, fb) = finite_difference_grad(&examples, &enc, tau, 1e-4);
        worst = worst.max(relative_error(&lg.grad.a, &fa)).max(relative_error(&lg.grad.b, &fb));
    }
    CheckResult {
        name: "gradient",
        passed: worst <= 1e-3,
        detail: format!("{n} configurations, max relative error {worst:.2e}"),
    }
}

fn random_timeline(r: &mut SeededRng, n: usize, width: usize) -> Vec<Frame> {
    (0..n)
        .map(|t| Frame::new(t as f64, (0..width).map(|_| r.random_range(-1.0f32..1.0)).collect()))
        .collect()
}

fn check_attention(seed: u64, n: usize) -> CheckResult {
    let mut r = rng::derive(seed, "selfcheck.attention");
    let (mut causal_ok, mut bidir_changed) = (0, 0);
    for i in 0..n {
        let cfg = EncoderConfig {
            dim: 32,
            input_dim: 32,
            seed: seed + i as u64,
            ..Default::default()
        };
        let enc = Encoder::new(cfg, LoraConfig::default()).expect("valid");
        let x: Vec<f64> = (0..8 * 32).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut y = x.clone();
        for v in &mut y[32..] {
            *v += r.random_range(-1.0..1.0);
        }
        let (x, y) = (Matrix::from_rows(8, 32, x), Matrix::from_rows(8, 32, y));
        let first = |m: &Matrix, mode| attention_forward(m, mode, enc.weights()).row(0).to_vec();
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        if bits(first(&x, MaskMode::Causal)) == bits(first(&y, MaskMode::Causal)) {
            causal_ok += 1;
        }
        if first(&x, MaskMode::Bidirectional) != first(&y, MaskMode::Bidirectional) {
            bidir_changed += 1;
        }
    }
    CheckResult {
        name: "attention",
        passed: causal_ok == n && bidir_changed * 100 >= n * 99,
        detail: format!("causal invariant {causal_ok}/{n}, bidirectional changed {bidir_changed}/{n}"),
    }
}

fn check_lora_identity(seed: u64, n: usize) -> CheckResult {
    let mut r = rng::derive(seed, "selfcheck.lora");
    let enc = Encoder::new(EncoderConfig { input_dim: 8, seed, ..Default::default() }, LoraConfig::default())
        .expect("valid");
    let mut same = 0;
    for _ in 0..n {
        let len = r.random_range(1..10usize);
        let s = Stream::media(Modality::Video, random_timeline(&mut r, len, 8)).expect("valid");
        if enc.encode_stream(&s).ok() == enc.encode_stream_frozen(&s).ok() {
            same += 1;
        }
    }
    CheckResult {
        name: "lora-identity",
        passed: same == n,
        detail: format!("{same}/{n} streams identical"),
    }
}

fn check_budget() -> CheckResult {
    let media = MediaDescriptor {
        duration_s: 1050.67,
        frame_width: 1280,
        frame_height: 720,
        has_audio: true,
        text_token_count: 3497,
    };
    let args = ProcessorArgs::default();
    let t = |s| estimate_tokens(&media, s, &args).map(|l| l.total).unwrap_or(0);
    let (a, x, v, f) = (t(Setting::AudioOnly), t(Setting::Text), t(Setting::VideoOnly), t(Setting::AvFused));
    CheckResult {
        name: "budget",
        passed: a < x && x < v && v < f && f <= a + v,
        detail: format!("audio {a} < text {x} < video {v} < fused {f} <= {}", a + v),
    }
}

fn check_store_round_trip(seed: u64, n: usize) -> CheckResult {
    let mut r = rng::derive(seed, "selfcheck.store");
    let mut bad = 0;
    for i in 0..n {
        let d = r.random_range(1..16usize);
        let mut s = EmbeddingStore::new(d).expect("d > 0");
        for j in 0..r.random_range(0..20usize) {
            let label = if j % 3 == 0 { FUSED_LABEL } else { "video" };
            s.push(format!("doc-{i}-{j}"), label, unit(&mut r, d)).expect("unique");
        }
        let bytes = encode_store(&s).expect("encodable");
        match decode_store(&bytes) {
            Ok(back) if back == s && encode_store(&back).ok().as_deref() == Some(&bytes[..]) => {}
            _ => bad += 1,
        }
    }
    CheckResult {
        name: "store-round-trip",
        passed: bad == 0,
        detail: format!("{n} stores, {bad} mismatches"),
    }
}

/// All suites with modest instance counts.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![
        check_ndcg(seed, 200),
        check_search(seed, 20),
        check_gradient(seed, 9),
        check_mining(seed, 500),
        check_attention(seed, 100),
        check_lora_identity(seed, 100),
        check_budget(),
        check_store_round_trip(seed, 100),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selfcheck_passes() {
        for c in run_all(0) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn ndcg_direct_known_value() {
        // relevant doc at rank 2 of 2: (1/log2 3) / 1
        let g: BTreeMap<String, u32> = [("b".to_string(), 1)].into();
        assert!((ndcg_direct(&["a", "b"], &g, 10) - 1.0 / 3f64.log2()).abs() < 1e-15);
    }
}
