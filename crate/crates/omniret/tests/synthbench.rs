use omniret::dataio::write_items;
use omniret::pipeline::{embed_corpus, encode_queries, evaluate_setting, EmbedMode, EvalSetting};
use omniret_core::rng;
use omniret_core::synth::{generate_av_conflict, generate_separable, SynthSpec, SyntheticSet};
use omniret_core::vector::similarity;
use omniret_core::{Combiner, Encoder, EncoderConfig, FusionStrategy, LoraConfig, MetricReport, SimilarityFn};
use rand::seq::SliceRandom;

fn encoder(spec: &SynthSpec) -> Encoder {
    let cfg = EncoderConfig {
        input_dim: spec.input_dim,
        seed: spec.seed,
        ..Default::default()
    };
    Encoder::new(cfg, LoraConfig::default()).unwrap()
}

fn evaluate(set: &SyntheticSet, enc: &Encoder, mode: EmbedMode, setting: EvalSetting) -> MetricReport {
    let store = embed_corpus(enc, &set.corpus, mode).unwrap();
    let q = encode_queries(enc, &set.queries).unwrap();
    evaluate_setting(&store, &q, &set.qrels, setting, &[10], SimilarityFn::Cosine, Combiner::Max)
        .unwrap()
        .1
}

#[test]
fn separable_without_noise_is_solved_untrained() {
    for seed in 0..3 {
        let spec = SynthSpec {
            noise: 0.0,
            seed,
            ..Default::default()
        };
        let set = generate_separable(&spec).unwrap();
        let r = evaluate(&set, &encoder(&spec), EmbedMode::Separate, EvalSetting::All);
        assert_eq!(r.mean("ndcg@10"), Some(1.0), "seed {seed}");
    }
}

#[test]
fn heavy_noise_falls_to_the_random_baseline() {
    let n_docs = 64;
    let analytic: f64 = (1..=10).map(|i| 1.0 / n_docs as f64 / (i as f64 + 1.0).log2()).sum();

    // Monte-Carlo: rank the relevant doc uniformly at random
    let mut r = rng::derive(0, "test.baseline");
    let mut order: Vec<usize> = (0..n_docs).collect();
    let trials = 200_000;
    let mut mc = 0.0;
    for _ in 0..trials {
        order.shuffle(&mut r);
        let pos = order.iter().position(|&d| d == 0).unwrap();
        if pos < 10 {
            mc += 1.0 / (pos as f64 + 2.0).log2();
        }
    }
    mc /= trials as f64;
    assert!((mc - analytic).abs() < 0.003, "{mc} vs {analytic}");

    let mut per_query = Vec::new();
    for seed in 0..24 {
        let spec = SynthSpec {
            n_docs,
            noise: 100.0,
            seed,
            ..Default::default()
        };
        let set = generate_separable(&spec).unwrap();
        let r = evaluate(&set, &encoder(&spec), EmbedMode::Separate, EvalSetting::All);
        per_query.extend(r.metric("ndcg@10").unwrap().per_query.values().copied());
    }
    let n = per_query.len() as f64;
    let mean = per_query.iter().sum::<f64>() / n;
    let var = per_query.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!(
        (mean - analytic).abs() <= 4.0 * se,
        "mean {mean:.4} vs baseline {analytic:.4} (se {se:.4}, n {n})"
    );
}

#[test]
fn same_seed_same_files() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, seed: u64| {
        let set = generate_separable(&SynthSpec {
            seed,
            ..Default::default()
        })
        .unwrap();
        let p = dir.path().join(name);
        write_items(&p, &set.corpus).unwrap();
        std::fs::read(p).unwrap()
    };
    assert_eq!(write("a", 3), write("b", 3));
    assert_ne!(write("a", 3), write("c", 4));
}

#[test]
fn no_conflict_makes_fusion_and_separate_coincide() {
    let spec = SynthSpec {
        av_conflict_fraction: 0.0,
        ..Default::default()
    };
    let set = generate_av_conflict(&spec).unwrap();
    let enc = encoder(&spec);
    let queries = encode_queries(&enc, &set.queries).unwrap();
    let mut worst = 0.0f64;
    for doc in &set.corpus {
        let fused = enc.encode_item(doc, FusionStrategy::Interleaved).unwrap();
        let separate = enc.encode_item(doc, FusionStrategy::Separate).unwrap();
        assert_eq!(fused.len(), 1);
        assert_eq!(separate.len(), 2);
        for (_, q) in &queries {
            let f = similarity(q, &fused[0].1, SimilarityFn::Cosine).unwrap();
            for comb in Combiner::ALL {
                let scores: Vec<f64> = separate
                    .iter()
                    .map(|(_, e)| similarity(q, e, SimilarityFn::Cosine).unwrap())
                    .collect();
                let s = comb.combine(&scores).unwrap();
                let s = if comb == Combiner::Sum { s / 2.0 } else { s };
                worst = worst.max((f - s).abs());
            }
        }
    }
    assert!(worst <= 1e-6, "max score gap {worst:e}");
}

#[test]
fn full_conflict_without_noise_is_solved_by_separate_max() {
    for seed in 0..3 {
        let spec = SynthSpec {
            av_conflict_fraction: 1.0,
            noise: 0.0,
            seed,
            ..Default::default()
        };
        let set = generate_av_conflict(&spec).unwrap();
        let enc = encoder(&spec);
        let sep = evaluate(&set, &enc, EmbedMode::Separate, EvalSetting::Separate);
        assert_eq!(sep.mean("ndcg@10"), Some(1.0), "seed {seed}");
        let fused = evaluate(&set, &enc, EmbedMode::Interleaved, EvalSetting::Fused);
        assert!(fused.mean("ndcg@10").unwrap() < 1.0, "seed {seed}");
    }
}
