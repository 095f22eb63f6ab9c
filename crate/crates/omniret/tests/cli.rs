use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use omniret::dataio::{load_corpus, read_store, read_triples, read_weights};
use omniret::manifest;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_omniret"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn omniret")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}\nstderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    run(dir, args).status.code().expect("exited")
}

fn put(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Three single-frame video docs whose queries are the same frames.
fn identity_bench(dir: &Path) {
    let frames = ["[1, 0, 0, 0]", "[0, 1, 0, 0]", "[0, 0, 1, 0]"];
    let mut corpus = String::new();
    let mut queries = String::new();
    let mut qrels = String::new();
    for (i, f) in frames.iter().enumerate() {
        let stream = format!(r#"{{"modality": "video", "timeline": [{{"t": 0, "frame": {f}}}]}}"#);
        corpus.push_str(&format!("{{\"id\": \"d{i}\", \"streams\": [{stream}]}}\n"));
        queries.push_str(&format!("{{\"id\": \"q{i}\", \"streams\": [{stream}]}}\n"));
        qrels.push_str(&format!("{{\"query_id\": \"q{i}\", \"doc_id\": \"d{i}\", \"grade\": 1}}\n"));
    }
    put(dir, "corpus.jsonl", &corpus);
    put(dir, "queries.jsonl", &queries);
    put(dir, "qrels.jsonl", &qrels);
}

fn synth(dir: &Path, kind: &str) {
    ok(dir, &["synth", "--kind", kind, "--out-dir", ".", "--n-queries", "8", "--n-docs", "24"]);
}

#[test]
fn embed_text_corpus() {
    let d = tempfile::tempdir().unwrap();
    put(
        d.path(),
        "c.jsonl",
        "{\"id\": \"a\", \"text\": \"one two\"}\n{\"id\": \"b\", \"text\": \"three\"}\n{\"id\": \"c\", \"text\": \"four five six\"}\n",
    );
    ok(d.path(), &["embed", "--corpus", "c.jsonl", "--out", "s.bin"]);
    let s = read_store(&d.path().join("s.bin")).unwrap();
    assert_eq!(s.len(), 3);
    assert!(s.entries().iter().all(|e| e.label == "text" && e.embedding.is_normalized()));
    let ids: Vec<&str> = s.entries().iter().map(|e| e.doc_id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c"]);
}

#[test]
fn fusion_modes_control_entries_per_doc() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "av-conflict");
    let n = load_corpus(&d.path().join("corpus.jsonl"), 4096).unwrap().len();
    for (mode, per_doc) in [("separate", 2), ("interleaved", 1), ("both", 3)] {
        let out = format!("{mode}.bin");
        ok(d.path(), &["embed", "--corpus", "corpus.jsonl", "--out", &out, "--fusion", mode]);
        let s = read_store(&d.path().join(&out)).unwrap();
        assert_eq!(s.len(), n * per_doc, "{mode}");
    }
    let sep = read_store(&d.path().join("separate.bin")).unwrap();
    assert_eq!(sep.entries()[0].label, "audio");
    assert_eq!(sep.entries()[1].label, "video");
    assert_eq!(sep.entries()[0].doc_id, sep.entries()[1].doc_id);
}

#[test]
fn same_seed_gives_identical_store_and_manifest_digest() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "av-conflict");
    for out in ["a.bin", "b.bin"] {
        ok(d.path(), &["embed", "--corpus", "corpus.jsonl", "--out", out, "--seed", "7"]);
    }
    assert_eq!(fs::read(d.path().join("a.bin")).unwrap(), fs::read(d.path().join("b.bin")).unwrap());
    let ma = manifest::RunManifest::read(&d.path().join("a.bin.manifest.json")).unwrap();
    let mb = manifest::RunManifest::read(&d.path().join("b.bin.manifest.json")).unwrap();
    assert_eq!(ma.outputs[0].sha256, mb.outputs[0].sha256);
    assert_eq!(ma.outputs[0].sha256, manifest::sha256_file(&d.path().join("a.bin")).unwrap());
    assert_eq!(ma.seed, 7);

    ok(d.path(), &["embed", "--corpus", "corpus.jsonl", "--out", "c.bin", "--seed", "8"]);
    assert_ne!(fs::read(d.path().join("a.bin")).unwrap(), fs::read(d.path().join("c.bin")).unwrap());
}

#[test]
fn identity_benchmark_scores_perfectly() {
    let d = tempfile::tempdir().unwrap();
    identity_bench(d.path());
    ok(d.path(), &["embed", "--corpus", "corpus.jsonl", "--out", "s.bin"]);
    let table = ok(
        d.path(),
        &[
            "eval", "--store", "s.bin", "--queries", "queries.jsonl", "--qrels", "qrels.jsonl", "--settings", "video", "--out",
            "r.json",
        ],
    );
    assert!(table.contains("NDCG@10"));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("r.json")).unwrap()).unwrap();
    let cell = &r["rows"][0]["cells"][0];
    for m in ["ndcg@5", "ndcg@10", "recall@5", "recall@10"] {
        assert!((cell[m].as_f64().unwrap() - 1.0).abs() < 1e-12, "{m}: {cell}");
    }
}

#[test]
fn eval_table_has_one_column_per_setting() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "av-conflict");
    ok(d.path(), &["embed", "--corpus", "corpus.jsonl", "--out", "s.bin", "--fusion", "both"]);
    let table = ok(
        d.path(),
        &[
            "eval", "--store", "s.bin", "--queries", "queries.jsonl", "--qrels", "qrels.jsonl", "--settings",
            "audio,video,fused,separate", "--k", "5,10",
        ],
    );
    let header = table.lines().find(|l| l.starts_with("configuration")).expect("header");
    let cols: Vec<&str> = header.split('|').skip(1).map(str::trim).collect();
    assert_eq!(cols, ["audio", "video", "fused", "separate"]);
    for block in ["NDCG@5", "NDCG@10", "Recall@5", "Recall@10"] {
        assert!(table.lines().any(|l| l == block), "{block} missing:\n{table}");
    }
}

#[test]
fn fused_setting_needs_fused_entries() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "av-conflict");
    ok(d.path(), &["embed", "--corpus", "corpus.jsonl", "--out", "s.bin", "--fusion", "separate"]);
    let c = code(
        d.path(),
        &["eval", "--store", "s.bin", "--queries", "queries.jsonl", "--qrels", "qrels.jsonl", "--settings", "fused"],
    );
    assert_eq!(c, 1);
}

#[test]
fn search_then_eval_run_matches_direct_eval() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "separable");
    ok(d.path(), &["embed", "--corpus", "corpus.jsonl", "--out", "s.bin"]);
    ok(d.path(), &["search", "--store", "s.bin", "--queries", "queries.jsonl", "--out", "run.jsonl", "--k", "10"]);
    ok(d.path(), &["eval", "--run", "run.jsonl", "--qrels", "qrels.jsonl", "--k", "10", "--out", "a.json"]);
    ok(
        d.path(),
        &[
            "eval", "--store", "s.bin", "--queries", "queries.jsonl", "--qrels", "qrels.jsonl", "--settings", "all", "--k", "10",
            "--out", "b.json",
        ],
    );
    let read = |p: &str| -> serde_json::Value { serde_json::from_str(&fs::read_to_string(d.path().join(p)).unwrap()).unwrap() };
    let (a, b) = (read("a.json"), read("b.json"));
    assert_eq!(a["rows"][0]["cells"][0]["ndcg@10"], b["rows"][0]["cells"][0]["ndcg@10"]);
}

#[test]
fn ablation_requires_multi_stream_docs() {
    let d = tempfile::tempdir().unwrap();
    identity_bench(d.path());
    let out = run(
        d.path(),
        &["ablate-fusion", "--corpus", "corpus.jsonl", "--queries", "queries.jsonl", "--qrels", "qrels.jsonl"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn ablation_reports_all_columns() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "av-conflict");
    let table = ok(
        d.path(),
        &[
            "ablate-fusion", "--corpus", "corpus.jsonl", "--queries", "queries.jsonl", "--qrels", "qrels.jsonl", "--out", "a.json",
        ],
    );
    for col in ["fused", "separate-max", "separate-mean", "separate-sum"] {
        assert!(table.contains(col), "{col}");
    }
    assert!(table.contains("separate-max - fused"));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("a.json")).unwrap()).unwrap();
    assert_eq!(r["columns"].as_array().unwrap().len(), 7);
}

#[test]
fn budget_table() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(d.path(), &["budget", "--duration", "60", "--text-tokens", "3497"]);
    let len = |label: &str| -> u64 {
        let line = out.lines().find(|l| l.starts_with(label)).unwrap_or_else(|| panic!("{label}\n{out}"));
        line.split('|').nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap()
    };
    assert_eq!(len("Text"), 3499);
    let (a, v, f, s) = (len("Audio-Only"), len("Video-Only"), len("Audio + Video (Fusion)"), len("Audio + Video (Separately)"));
    assert!(a < v && f <= a + v && s == a + v);

    let only = ok(d.path(), &["budget", "--duration", "10", "--setting", "video_only"]);
    assert_eq!(only.lines().filter(|l| l.contains('|')).count(), 2);

    assert_eq!(code(d.path(), &["budget", "--duration", "-1"]), 1);
    assert_eq!(code(d.path(), &["budget", "--duration", "10", "--setting", "smell"]), 1);
}

#[test]
fn mine_writes_valid_triples() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "separable");
    ok(
        d.path(),
        &[
            "mine", "--corpus", "corpus.jsonl", "--queries", "queries.jsonl", "--qrels", "qrels.jsonl", "--out", "t.jsonl",
            "--k-negatives", "3",
        ],
    );
    let t = read_triples(&d.path().join("t.jsonl")).unwrap();
    assert_eq!(t.len(), 8);
    assert!(t.iter().all(|x| x.negative_ids.len() == 3 && !x.negative_ids.contains(&x.positive_id)));
}

#[test]
fn train_writes_weights_and_loss_trace() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "separable");
    let args = [
        "train", "--corpus", "corpus.jsonl", "--queries", "queries.jsonl", "--qrels", "qrels.jsonl", "--out", "w.bin",
        "--loss-csv", "loss.csv", "--epochs", "3", "--batch-size", "4",
    ];
    ok(d.path(), &args);
    let csv = fs::read_to_string(d.path().join("loss.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,loss"));
    let steps: Vec<(usize, f64)> = lines
        .map(|l| {
            let (s, v) = l.split_once(',').unwrap();
            (s.parse().unwrap(), v.parse().unwrap())
        })
        .collect();
    assert_eq!(steps.len(), 3 * 2);
    assert!(steps.iter().enumerate().all(|(i, (s, v))| *s == i && v.is_finite() && *v > 0.0));

    let w = read_weights(&d.path().join("w.bin")).unwrap();
    assert!(w.weights().lora_b.max_abs() > 0.0);

    let first = fs::read(d.path().join("w.bin")).unwrap();
    ok(d.path(), &args);
    assert_eq!(first, fs::read(d.path().join("w.bin")).unwrap());

    // trained weights drive embedding
    ok(d.path(), &["embed", "--corpus", "corpus.jsonl", "--out", "s.bin", "--weights", "w.bin"]);
    assert_eq!(code(d.path(), &["embed", "--corpus", "corpus.jsonl", "--out", "x.bin", "--weights", "w.bin", "--dim", "8"]), 1);
}

#[test]
fn config_file_and_flag_precedence() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "separable");
    put(d.path(), "c.conf", "# encoder\nencoder.dim = 16\nseed = 3\n");
    ok(d.path(), &["--config", "c.conf", "embed", "--corpus", "corpus.jsonl", "--out", "a.bin"]);
    assert_eq!(read_store(&d.path().join("a.bin")).unwrap().dim(), 16);
    ok(d.path(), &["--config", "c.conf", "embed", "--corpus", "corpus.jsonl", "--out", "b.bin", "--dim", "8"]);
    assert_eq!(read_store(&d.path().join("b.bin")).unwrap().dim(), 8);

    put(d.path(), "bad.conf", "encoder.dims = 16\n");
    assert_eq!(code(d.path(), &["--config", "bad.conf", "embed", "--corpus", "corpus.jsonl", "--out", "c.bin"]), 1);
}

#[test]
fn replay_reproduces_artifact() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "av-conflict");
    ok(d.path(), &["embed", "--corpus", "corpus.jsonl", "--out", "s.bin", "--fusion", "both", "--seed", "4"]);
    let before = fs::read(d.path().join("s.bin")).unwrap();
    fs::remove_file(d.path().join("s.bin")).unwrap();
    ok(d.path(), &["replay", "s.bin.manifest.json"]);
    assert_eq!(before, fs::read(d.path().join("s.bin")).unwrap());
}

#[test]
fn synth_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    for dir in ["a", "b"] {
        ok(d.path(), &["synth", "--kind", "av-conflict", "--out-dir", dir, "--seed", "9"]);
    }
    for f in ["corpus.jsonl", "queries.jsonl", "qrels.jsonl"] {
        assert_eq!(fs::read(d.path().join("a").join(f)).unwrap(), fs::read(d.path().join("b").join(f)).unwrap());
    }
}

#[test]
fn selfcheck_passes() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(d.path(), &["selfcheck"]);
    assert!(out.lines().count() >= 8);
    assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    identity_bench(d.path());
    assert_eq!(code(d.path(), &["--help"]), 0);
    assert_eq!(code(d.path(), &["--version"]), 0);
    assert_eq!(code(d.path(), &["frobnicate"]), 1);
    assert_eq!(code(d.path(), &["embed", "--corpus", "corpus.jsonl"]), 1);
    assert_eq!(code(d.path(), &["embed", "--corpus", "missing.jsonl", "--out", "s.bin"]), 2);
    assert_eq!(code(d.path(), &["embed", "--corpus", "corpus.jsonl", "--out", "no/such/dir/s.bin"]), 2);
    put(d.path(), "bad.jsonl", "{\"id\": \"a\", \"text\": \"x\"}\n{oops\n");
    let out = run(d.path(), &["embed", "--corpus", "bad.jsonl", "--out", "s.bin"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2"));
    assert_eq!(code(d.path(), &["embed", "--corpus", "corpus.jsonl", "--out", "s.bin", "--lora-rank", "0"]), 1);
    put(d.path(), "junk.bin", "not a store");
    assert_eq!(
        code(d.path(), &["search", "--store", "junk.bin", "--queries", "queries.jsonl", "--out", "r.jsonl"]),
        1
    );
}
