use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use omniret_core::budget::{estimate_tokens, MediaDescriptor, ProcessorArgs, Setting};
use omniret_core::metrics::evaluate_run;
use omniret_core::mining::MiningConfig;
use omniret_core::synth::{generate_av_conflict, generate_separable, SynthSpec};
use omniret_core::training::{mine_epoch, train, TrainConfig};
use omniret_core::{Combiner, Encoder, EncoderConfig, LoraConfig, MaskMode, MediaItem, SimilarityFn};

use omniret::config::ConfigFile;
use omniret::dataio;
use omniret::error::{AppError, Result};
use omniret::manifest::RunManifest;
use omniret::oracle;
use omniret::pipeline::{self, parse_list, EmbedMode, EvalSetting};
use omniret::report::{Report, ReportRow};

/// Multimodal bi-encoder retrieval: embedding, search, evaluation, hard-negative
/// mining, contrastive LoRA training, fusion ablations and token budgets.
///
/// Exit codes: 0 success, 1 invalid input or flags, 2 I/O failure, 3 internal error.
#[derive(Debug, Parser)]
#[command(name = "omniret", version)]
struct Cli {
    /// `key = value` configuration file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct EncoderFlags {
    /// Root seed; every generator derives from it by a fixed label.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    vocab_size: Option<u32>,
    /// Frame feature width; inferred from the input files when omitted.
    #[arg(long)]
    input_dim: Option<usize>,
    /// causal or bidirectional.
    #[arg(long)]
    mask_mode: Option<MaskMode>,
    #[arg(long)]
    lora_rank: Option<usize>,
    #[arg(long)]
    lora_alpha: Option<f64>,
    /// Trained weights written by `train`; replaces the other encoder flags.
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct ScoringFlags {
    /// Late-fusion combiner over per-stream scores: max, mean or sum.
    #[arg(long)]
    combiner: Option<Combiner>,
    /// cosine or dot.
    #[arg(long)]
    similarity: Option<SimilarityFn>,
}

#[derive(Debug, Clone, Args)]
struct MiningFlags {
    /// Negatives must score below threshold × positive score.
    #[arg(long)]
    threshold: Option<f64>,
    /// Hard negatives kept per query.
    #[arg(long)]
    k_negatives: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode a corpus into a binary embedding store.
    Embed {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// interleaved, separate, or both (per-stream and fused entries).
        #[arg(long)]
        fusion: Option<EmbedMode>,
        #[command(flatten)]
        encoder: EncoderFlags,
    },
    /// Exact top-k search of queries against a store; writes a run file.
    Search {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        /// Which store entries represent a document (text, audio, video, fused, separate, all).
        #[arg(long, default_value = "all")]
        setting: EvalSetting,
        #[command(flatten)]
        scoring: ScoringFlags,
        #[command(flatten)]
        encoder: EncoderFlags,
    },
    /// NDCG and recall per setting, from a store and queries or from a run file.
    Eval {
        #[arg(long, required_unless_present = "run")]
        store: Option<PathBuf>,
        #[arg(long, required_unless_present = "run")]
        queries: Option<PathBuf>,
        /// Evaluate an existing run file instead of searching.
        #[arg(long, conflicts_with_all = ["store", "queries"])]
        run: Option<PathBuf>,
        #[arg(long)]
        qrels: PathBuf,
        /// Comma-separated settings, one report column each.
        #[arg(long)]
        settings: Option<String>,
        /// Comma-separated cutoffs.
        #[arg(long)]
        k: Option<String>,
        /// JSON report path; the table always goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        scoring: ScoringFlags,
        #[command(flatten)]
        encoder: EncoderFlags,
    },
    /// Mine hard negatives; writes training triples.
    Mine {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        mining: MiningFlags,
        #[command(flatten)]
        encoder: EncoderFlags,
    },
    /// Train the LoRA factors with InfoNCE and mined hard negatives.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// Weights file to write.
        #[arg(long)]
        out: PathBuf,
        /// Loss trace CSV (step, loss).
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        /// Softmax temperature.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Use only mined negatives, not the other positives in the batch.
        #[arg(long)]
        no_in_batch_negatives: bool,
        #[command(flatten)]
        mining: MiningFlags,
        #[command(flatten)]
        encoder: EncoderFlags,
    },
    /// Compare single modalities, interleaved fusion and separate encoding.
    AblateFusion {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        k: Option<String>,
        #[arg(long)]
        similarity: Option<SimilarityFn>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        encoder: EncoderFlags,
    },
    /// Sequence length of a media file under each modality setting.
    Budget(BudgetArgs),
    /// Write a synthetic benchmark (corpus, queries, qrels).
    Synth {
        /// separable or av-conflict.
        #[arg(long, default_value = "separable")]
        kind: String,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        n_queries: Option<usize>,
        #[arg(long)]
        n_docs: Option<usize>,
        #[arg(long)]
        input_dim: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        conflict: Option<f64>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the oracle suites.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-run the command recorded in an artifact manifest.
    Replay { manifest: PathBuf },
}

#[derive(Debug, Args)]
struct BudgetArgs {
    /// Media duration in seconds.
    #[arg(long)]
    duration: f64,
    #[arg(long, default_value_t = 1280)]
    width: u64,
    #[arg(long, default_value_t = 720)]
    height: u64,
    /// Transcript plus OCR tokens for the text setting.
    #[arg(long, default_value_t = 0)]
    text_tokens: u64,
    #[arg(long)]
    no_audio: bool,
    /// Comma-separated settings or `all`.
    #[arg(long, default_value = "text,audio_only,video_only,av_fused,av_separate")]
    setting: String,
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long)]
    min_pixels: Option<u64>,
    #[arg(long)]
    max_pixels: Option<u64>,
    #[arg(long)]
    audio_max_length: Option<u64>,
    #[arg(long)]
    image_max_pixels: Option<u64>,
    #[arg(long)]
    image_min_pixels: Option<u64>,
    #[arg(long)]
    audio_tokens_per_second: Option<f64>,
    #[arg(long)]
    patch_pixels: Option<u64>,
    #[arg(long)]
    fused_overhead_tokens: Option<u64>,
    #[arg(long)]
    special_tokens: Option<u64>,
}

struct Ctx {
    cfg: ConfigFile,
    argv: Vec<String>,
    snapshot: BTreeMap<String, String>,
}

impl Ctx {
    fn note(&mut self, key: &str, value: impl ToString) {
        self.snapshot.insert(key.to_string(), value.to_string());
    }

    fn seed(&self, flag: Option<u64>) -> Result<u64> {
        self.cfg.resolve(flag, "seed", 0)
    }

    fn manifest(&self, command: &str, seed: u64) -> RunManifest {
        RunManifest::new(command, self.argv.clone(), self.snapshot.clone(), seed)
    }

    fn scoring(&mut self, f: &ScoringFlags) -> Result<(Combiner, SimilarityFn)> {
        let c = self.cfg.resolve(f.combiner, "combiner", Combiner::Max)?;
        let s = self.cfg.resolve(f.similarity, "similarity", SimilarityFn::Cosine)?;
        self.note("combiner", c);
        self.note("similarity", s);
        Ok((c, s))
    }

    fn ks(&mut self, flag: &Option<String>) -> Result<Vec<usize>> {
        let raw = match flag {
            Some(s) => s.clone(),
            None => self.cfg.get_raw("k").unwrap_or("5,10").to_string(),
        };
        let ks: Vec<usize> = parse_list(&raw).map_err(|e| AppError::Validation(format!("--k {raw:?}: {e}")))?;
        if ks.is_empty() || ks.contains(&0) {
            return Err(AppError::Validation("--k needs positive cutoffs".into()));
        }
        self.note("k", &raw);
        Ok(ks)
    }

    fn mining(&mut self, f: &MiningFlags) -> Result<MiningConfig> {
        let d = MiningConfig::default();
        let m = MiningConfig {
            threshold: self.cfg.resolve(f.threshold, "train.threshold", d.threshold)?,
            k: self.cfg.resolve(f.k_negatives, "train.k_negatives", d.k)?,
        };
        m.validate()?;
        self.note("train.threshold", m.threshold);
        self.note("train.k_negatives", m.k);
        Ok(m)
    }
}

/// Encoder settings resolved before the inputs are read; the frame width
/// may still come from the data.
enum EncoderSource {
    Fresh {
        config: EncoderConfig,
        lora: LoraConfig,
        input_dim_fixed: bool,
    },
    Trained(Box<Encoder>),
}

impl EncoderSource {
    fn resolve(ctx: &mut Ctx, f: &EncoderFlags) -> Result<Self> {
        if let Some(path) = &f.weights {
            let explicit = f.dim.is_some()
                || f.vocab_size.is_some()
                || f.input_dim.is_some()
                || f.mask_mode.is_some()
                || f.lora_rank.is_some()
                || f.lora_alpha.is_some()
                || f.seed.is_some();
            if explicit {
                return Err(AppError::Validation(
                    "--weights fixes the encoder; drop --seed, --dim, --vocab-size, --input-dim, --mask-mode and --lora-*".into(),
                ));
            }
            ctx.note("weights", path.display());
            return Ok(EncoderSource::Trained(Box::new(dataio::read_weights(path)?)));
        }
        let d = EncoderConfig::default();
        let seed = match ctx.cfg.get::<u64>("encoder.seed")? {
            Some(s) if f.seed.is_none() => s,
            _ => ctx.seed(f.seed)?,
        };
        let input_dim = f.input_dim.or(ctx.cfg.get("encoder.input_dim")?);
        let config = EncoderConfig {
            vocab_size: ctx.cfg.resolve(f.vocab_size, "encoder.vocab_size", d.vocab_size)?,
            dim: ctx.cfg.resolve(f.dim, "encoder.dim", d.dim)?,
            input_dim: input_dim.unwrap_or(d.input_dim),
            mask_mode: ctx.cfg.resolve(f.mask_mode, "encoder.mask_mode", d.mask_mode)?,
            seed,
        };
        let dl = LoraConfig::default();
        let lora = LoraConfig {
            rank: ctx.cfg.resolve(f.lora_rank, "lora.r", dl.rank)?,
            alpha: ctx.cfg.resolve(f.lora_alpha, "lora.alpha", dl.alpha)?,
        };
        Ok(EncoderSource::Fresh {
            config,
            lora,
            input_dim_fixed: input_dim.is_some(),
        })
    }

    fn vocab_size(&self) -> u32 {
        match self {
            EncoderSource::Fresh { config, .. } => config.vocab_size,
            EncoderSource::Trained(e) => e.config().vocab_size,
        }
    }

    /// Builds the encoder, taking the frame width from `items` unless fixed.
    fn build<'a>(self, ctx: &mut Ctx, items: impl IntoIterator<Item = &'a MediaItem>) -> Result<Encoder> {
        let width = pipeline::infer_input_dim(items)?;
        let enc = match self {
            EncoderSource::Trained(e) => *e,
            EncoderSource::Fresh {
                mut config,
                lora,
                input_dim_fixed,
            } => {
                if let (false, Some(w)) = (input_dim_fixed, width) {
                    config.input_dim = w;
                }
                Encoder::new(config, lora)?
            }
        };
        if let Some(w) = width {
            if w != enc.config().input_dim {
                return Err(AppError::Validation(format!(
                    "frames have width {w} but the encoder expects {}",
                    enc.config().input_dim
                )));
            }
        }
        let c = enc.config();
        ctx.note("encoder.seed", c.seed);
        ctx.note("encoder.dim", c.dim);
        ctx.note("encoder.vocab_size", c.vocab_size);
        ctx.note("encoder.input_dim", c.input_dim);
        ctx.note("encoder.mask_mode", c.mask_mode);
        ctx.note("lora.r", enc.lora_config().rank);
        ctx.note("lora.alpha", enc.lora_config().alpha);
        Ok(enc)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    dataio::write_atomic(path, text.as_bytes())
}

fn cmd_embed(ctx: &mut Ctx, corpus: &Path, out: &Path, fusion: Option<EmbedMode>, f: &EncoderFlags) -> Result<()> {
    let src = EncoderSource::resolve(ctx, f)?;
    let items = dataio::load_corpus(corpus, src.vocab_size())?;
    let enc = src.build(ctx, &items)?;
    let mode = ctx.cfg.resolve(fusion, "fusion", EmbedMode::Separate)?;
    ctx.note("fusion", mode);
    let store = pipeline::embed_corpus(&enc, &items, mode)?;
    dataio::write_store(&store, out)?;
    let mut m = ctx.manifest("embed", enc.config().seed);
    m.add_inputs([corpus])?;
    m.write_for(&[out])?;
    println!("wrote {} entries for {} documents to {}", store.len(), items.len(), out.display());
    Ok(())
}

fn load_queries_for_store(
    ctx: &mut Ctx,
    queries: &Path,
    f: &EncoderFlags,
) -> Result<(Encoder, Vec<(String, omniret_core::Embedding)>)> {
    let src = EncoderSource::resolve(ctx, f)?;
    let q = dataio::load_queries(queries, src.vocab_size())?;
    let enc = src.build(ctx, &q)?;
    let emb = pipeline::encode_queries(&enc, &q)?;
    Ok((enc, emb))
}

#[allow(clippy::too_many_arguments)]
fn cmd_search(
    ctx: &mut Ctx,
    store: &Path,
    queries: &Path,
    out: &Path,
    k: Option<usize>,
    setting: EvalSetting,
    s: &ScoringFlags,
    f: &EncoderFlags,
) -> Result<()> {
    let st = dataio::read_store(store)?;
    let (enc, q) = load_queries_for_store(ctx, queries, f)?;
    pipeline::check_dims(&st, &q)?;
    let (combiner, func) = ctx.scoring(s)?;
    let k = ctx.cfg.resolve(k, "k", 10)?;
    ctx.note("k", k);
    ctx.note("setting", setting);
    let docs = pipeline::setting_view(&st, setting)?;
    let run = pipeline::search_all(&q, &docs, k, func, combiner)?;
    dataio::write_run(out, &run)?;
    let mut m = ctx.manifest("search", enc.config().seed);
    m.add_inputs([store, queries])?;
    m.write_for(&[out])?;
    println!("wrote top-{k} results for {} queries to {}", run.len(), out.display());
    Ok(())
}

fn emit_report(ctx: &Ctx, command: &str, seed: u64, report: &Report, inputs: &[&Path], out: Option<&Path>) -> Result<()> {
    print!("{}", report.to_table());
    if let Some(out) = out {
        write_text(out, &report.to_json())?;
        let mut m = ctx.manifest(command, seed);
        m.add_inputs(inputs.iter().copied())?;
        m.write_for(&[out])?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    ctx: &mut Ctx,
    store: Option<&Path>,
    queries: Option<&Path>,
    run: Option<&Path>,
    qrels: &Path,
    settings: &Option<String>,
    k: &Option<String>,
    out: Option<&Path>,
    s: &ScoringFlags,
    f: &EncoderFlags,
) -> Result<()> {
    let qr = dataio::load_qrels(qrels)?;
    let ks = ctx.ks(k)?;
    if let Some(run_path) = run {
        let r = dataio::read_run(run_path)?;
        let mr = evaluate_run(&r, &qr, &ks)?;
        let mut report = Report::new("run evaluation".into());
        report.metrics = mr.metrics.iter().map(|m| m.name.clone()).collect();
        report.columns = vec!["run".into()];
        report.excluded_queries = mr.excluded_queries.clone();
        report.rows.push(ReportRow {
            name: run_path.display().to_string(),
            cells: vec![Some(mr.metrics.iter().map(|m| (m.name.clone(), m.mean)).collect())],
        });
        return emit_report(ctx, "eval", 0, &report, &[run_path, qrels], out);
    }
    let (store, queries) = (store.expect("clap requires store"), queries.expect("clap requires queries"));
    let st = dataio::read_store(store)?;
    let (enc, q) = load_queries_for_store(ctx, queries, f)?;
    let (combiner, func) = ctx.scoring(s)?;
    let raw = match settings {
        Some(s) => s.clone(),
        None => ctx.cfg.get_raw("settings").unwrap_or("all").to_string(),
    };
    let settings: Vec<EvalSetting> = parse_list(&raw)?;
    if settings.is_empty() {
        return Err(AppError::Validation("--settings is empty".into()));
    }
    ctx.note("settings", &raw);
    let row = format!("encoder seed {}", enc.config().seed);
    let report = pipeline::evaluate_settings(&row, &st, &q, &qr, &settings, &ks, func, combiner)?;
    emit_report(ctx, "eval", enc.config().seed, &report, &[store, queries, qrels], out)
}

struct Inputs {
    corpus: Vec<MediaItem>,
    queries: Vec<MediaItem>,
    qrels: omniret_core::Qrels,
    encoder: Encoder,
}

fn load_training_inputs(ctx: &mut Ctx, corpus: &Path, queries: &Path, qrels: &Path, f: &EncoderFlags) -> Result<Inputs> {
    let src = EncoderSource::resolve(ctx, f)?;
    let c = dataio::load_corpus(corpus, src.vocab_size())?;
    let q = dataio::load_queries(queries, src.vocab_size())?;
    let qr = dataio::load_qrels(qrels)?;
    let encoder = src.build(ctx, c.iter().chain(&q))?;
    Ok(Inputs {
        corpus: c,
        queries: q,
        qrels: qr,
        encoder,
    })
}

fn cmd_mine(ctx: &mut Ctx, corpus: &Path, queries: &Path, qrels: &Path, out: &Path, mf: &MiningFlags, f: &EncoderFlags) -> Result<()> {
    let inp = load_training_inputs(ctx, corpus, queries, qrels, f)?;
    let cfg = TrainConfig {
        mining: ctx.mining(mf)?,
        ..TrainConfig::default()
    };
    let enc = &inp.encoder;
    let index: BTreeMap<&str, usize> = inp.corpus.iter().enumerate().map(|(i, d)| (d.id(), i)).collect();
    let corpus_emb = inp
        .corpus
        .iter()
        .map(|d| enc.embed_pooled(&enc.pooled_item(d)?))
        .collect::<omniret_core::Result<Vec<_>>>()?;
    let corpus_ids: Vec<&str> = inp.corpus.iter().map(MediaItem::id).collect();
    let mut missing = Vec::new();
    let mut prepared = Vec::new();
    for q in &inp.queries {
        let Some(pos) = inp.qrels.best_positive(q.id()).and_then(|p| index.get(p).copied()) else {
            missing.push(q.id().to_string());
            continue;
        };
        let relevant: std::collections::BTreeSet<usize> = inp
            .qrels
            .relevant(q.id())
            .into_iter()
            .filter_map(|d| index.get(d).copied())
            .collect();
        prepared.push((q.id(), enc.embed_pooled(&enc.pooled_item(q)?)?, pos, relevant));
    }
    if !missing.is_empty() {
        return Err(omniret_core::Error::NoPositive(missing).into());
    }
    let refs: Vec<_> = prepared.iter().map(|(id, e, p, r)| (*id, e.clone(), *p, r)).collect();
    let mined = mine_epoch(&refs, &corpus_ids, &corpus_emb, &cfg, 0)?;
    dataio::write_triples(out, &mined.triples)?;
    let mut m = ctx.manifest("mine", enc.config().seed);
    m.add_inputs([corpus, queries, qrels])?;
    m.write_for(&[out])?;
    println!(
        "wrote {} triples to {} ({} queries mined without threshold: positive scored <= 0)",
        mined.triples.len(),
        out.display(),
        mined.degenerate_queries.len()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    ctx: &mut Ctx,
    corpus: &Path,
    queries: &Path,
    qrels: &Path,
    out: &Path,
    loss_csv: Option<&Path>,
    tau: Option<f64>,
    lr: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    no_in_batch: bool,
    mf: &MiningFlags,
    f: &EncoderFlags,
) -> Result<()> {
    let inp = load_training_inputs(ctx, corpus, queries, qrels, f)?;
    let d = TrainConfig::default();
    let in_batch = if no_in_batch {
        false
    } else {
        ctx.cfg.resolve(None, "train.in_batch_negatives", d.in_batch_negatives)?
    };
    let cfg = TrainConfig {
        temperature: ctx.cfg.resolve(tau, "train.tau", d.temperature)?,
        learning_rate: ctx.cfg.resolve(lr, "train.lr", d.learning_rate)?,
        epochs: ctx.cfg.resolve(epochs, "train.epochs", d.epochs)?,
        batch_size: ctx.cfg.resolve(batch_size, "train.batch_size", d.batch_size)?,
        in_batch_negatives: in_batch,
        seed: ctx.seed(f.seed)?,
        mining: ctx.mining(mf)?,
        similarity: SimilarityFn::Cosine,
    };
    ctx.note("train.tau", cfg.temperature);
    ctx.note("train.lr", cfg.learning_rate);
    ctx.note("train.epochs", cfg.epochs);
    ctx.note("train.batch_size", cfg.batch_size);
    ctx.note("train.in_batch_negatives", cfg.in_batch_negatives);
    ctx.note("seed", cfg.seed);
    let outcome = train(inp.encoder, &inp.corpus, &inp.queries, &inp.qrels, &cfg)?;
    dataio::write_weights(out, &outcome.encoder)?;
    let mut artifacts = vec![out];
    if let Some(p) = loss_csv {
        dataio::write_loss_csv(p, &outcome.trace)?;
        artifacts.push(p);
    }
    let mut m = ctx.manifest("train", cfg.seed);
    m.add_inputs([corpus, queries, qrels])?;
    m.write_for(&artifacts)?;
    for (e, l) in outcome.epoch_means().iter().enumerate() {
        println!("epoch {e:>3}  mean loss {l:.6}");
    }
    println!("wrote weights to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_ablate(
    ctx: &mut Ctx,
    corpus: &Path,
    queries: &Path,
    qrels: &Path,
    k: &Option<String>,
    similarity: Option<SimilarityFn>,
    out: Option<&Path>,
    f: &EncoderFlags,
) -> Result<()> {
    let inp = load_training_inputs(ctx, corpus, queries, qrels, f)?;
    let ks = ctx.ks(k)?;
    let func = ctx.cfg.resolve(similarity, "similarity", SimilarityFn::Cosine)?;
    ctx.note("similarity", func);
    let seed = inp.encoder.config().seed;
    let row = format!("encoder seed {seed}");
    let report = pipeline::ablate_fusion(&row, &inp.encoder, &inp.corpus, &inp.queries, &inp.qrels, &ks, func)?;
    emit_report(ctx, "ablate-fusion", seed, &report, &[corpus, queries, qrels], out)
}

fn setting_title(s: Setting) -> &'static str {
    match s {
        Setting::Text => "Text (Transcript + OCR)",
        Setting::Image => "Image",
        Setting::AudioOnly => "Audio-Only",
        Setting::VideoOnly => "Video-Only",
        Setting::AvFused => "Audio + Video (Fusion)",
        Setting::AvSeparate => "Audio + Video (Separately)",
    }
}

fn cmd_budget(b: &BudgetArgs) -> Result<()> {
    let d = ProcessorArgs::default();
    let args = ProcessorArgs {
        min_pixels: b.min_pixels.unwrap_or(d.min_pixels),
        max_pixels: b.max_pixels.unwrap_or(d.max_pixels),
        audio_max_length: b.audio_max_length.unwrap_or(d.audio_max_length),
        image_max_pixels: b.image_max_pixels.unwrap_or(d.image_max_pixels),
        image_min_pixels: b.image_min_pixels.unwrap_or(d.image_min_pixels),
        video_fps: b.fps.unwrap_or(d.video_fps),
        audio_tokens_per_second: b.audio_tokens_per_second.unwrap_or(d.audio_tokens_per_second),
        patch_pixels: b.patch_pixels.unwrap_or(d.patch_pixels),
        fused_overhead_tokens: b.fused_overhead_tokens.unwrap_or(d.fused_overhead_tokens),
        per_stream_special_tokens: b.special_tokens.unwrap_or(d.per_stream_special_tokens),
    };
    let media = MediaDescriptor {
        duration_s: b.duration,
        frame_width: b.width,
        frame_height: b.height,
        has_audio: !b.no_audio,
        text_token_count: b.text_tokens,
    };
    let settings: Vec<Setting> = if b.setting == "all" {
        Setting::ALL.to_vec()
    } else {
        parse_list(&b.setting)?
    };
    let rows = settings
        .iter()
        .map(|&s| {
            let l = estimate_tokens(&media, s, &args)?;
            let detail = if l.per_stream.len() > 1 {
                let parts: Vec<String> = l.per_stream.iter().map(|(n, t)| format!("{n} {t}")).collect();
                format!("  ({})", parts.join(" + "))
            } else {
                String::new()
            };
            Ok((setting_title(s), format!("{}{detail}", l.total)))
        })
        .collect::<Result<Vec<_>>>()?;
    let w = rows.iter().map(|r| r.0.len()).chain(["Modality Setting".len()]).max().unwrap_or(0);
    println!("{:<w$} | Sequence Length", "Modality Setting");
    println!("{}", "-".repeat(w + 18));
    for (name, len) in rows {
        println!("{name:<w$} | {len}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    ctx: &mut Ctx,
    kind: &str,
    out_dir: &Path,
    n_queries: Option<usize>,
    n_docs: Option<usize>,
    input_dim: Option<usize>,
    noise: Option<f64>,
    conflict: Option<f64>,
    frames: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        n_queries: n_queries.unwrap_or(d.n_queries),
        n_docs: n_docs.unwrap_or(d.n_docs),
        input_dim: input_dim.unwrap_or(d.input_dim),
        seed: ctx.seed(seed)?,
        noise: noise.unwrap_or(d.noise),
        av_conflict_fraction: conflict.unwrap_or(d.av_conflict_fraction),
        frames_per_item: frames.unwrap_or(d.frames_per_item),
        ..d
    };
    let set = match kind {
        "separable" => generate_separable(&spec)?,
        "av-conflict" => generate_av_conflict(&spec)?,
        _ => return Err(AppError::Validation(format!("unknown --kind {kind:?} (separable or av-conflict)"))),
    };
    std::fs::create_dir_all(out_dir).map_err(|e| AppError::io(out_dir, e))?;
    let (c, q, r) = (out_dir.join("corpus.jsonl"), out_dir.join("queries.jsonl"), out_dir.join("qrels.jsonl"));
    dataio::write_items(&c, &set.corpus)?;
    dataio::write_items(&q, &set.queries)?;
    dataio::write_qrels(&r, &set.qrels)?;
    for (k, v) in [
        ("synth.kind", kind.to_string()),
        ("synth.n_queries", spec.n_queries.to_string()),
        ("synth.n_docs", spec.n_docs.to_string()),
        ("synth.input_dim", spec.input_dim.to_string()),
        ("synth.noise", spec.noise.to_string()),
        ("synth.conflict", spec.av_conflict_fraction.to_string()),
        ("synth.frames", spec.frames_per_item.to_string()),
        ("seed", spec.seed.to_string()),
    ] {
        ctx.note(k, v);
    }
    let mut m = ctx.manifest("synth", spec.seed);
    m.write_for(&[&c, &q, &r])?;
    println!(
        "wrote {} documents, {} queries and judgments to {}",
        set.corpus.len(),
        set.queries.len(),
        out_dir.display()
    );
    Ok(())
}

fn cmd_selfcheck(seed: u64) -> Result<()> {
    let results = oracle::run_all(seed);
    for r in &results {
        println!("{} {:<18} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(AppError::Internal(format!("{failed} oracle suites failed")));
    }
    Ok(())
}

fn dispatch(cli: Cli, argv: Vec<String>) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut ctx = Ctx {
        cfg,
        argv,
        snapshot: BTreeMap::new(),
    };
    match &cli.command {
        Command::Embed { corpus, out, fusion, encoder } => cmd_embed(&mut ctx, corpus, out, *fusion, encoder),
        Command::Search {
            store,
            queries,
            out,
            k,
            setting,
            scoring,
            encoder,
        } => cmd_search(&mut ctx, store, queries, out, *k, *setting, scoring, encoder),
        Command::Eval {
            store,
            queries,
            run,
            qrels,
            settings,
            k,
            out,
            scoring,
            encoder,
        } => cmd_eval(
            &mut ctx,
            store.as_deref(),
            queries.as_deref(),
            run.as_deref(),
            qrels,
            settings,
            k,
            out.as_deref(),
            scoring,
            encoder,
        ),
        Command::Mine {
            corpus,
            queries,
            qrels,
            out,
            mining,
            encoder,
        } => cmd_mine(&mut ctx, corpus, queries, qrels, out, mining, encoder),
        Command::Train {
            corpus,
            queries,
            qrels,
            out,
            loss_csv,
            tau,
            lr,
            epochs,
            batch_size,
            no_in_batch_negatives,
            mining,
            encoder,
        } => cmd_train(
            &mut ctx,
            corpus,
            queries,
            qrels,
            out,
            loss_csv.as_deref(),
            *tau,
            *lr,
            *epochs,
            *batch_size,
            *no_in_batch_negatives,
            mining,
            encoder,
        ),
        Command::AblateFusion {
            corpus,
            queries,
            qrels,
            k,
            similarity,
            out,
            encoder,
        } => cmd_ablate(&mut ctx, corpus, queries, qrels, k, *similarity, out.as_deref(), encoder),
        Command::Budget(b) => cmd_budget(b),
        Command::Synth {
            kind,
            out_dir,
            n_queries,
            n_docs,
            input_dim,
            noise,
            conflict,
            frames,
            seed,
        } => cmd_synth(&mut ctx, kind, out_dir, *n_queries, *n_docs, *input_dim, *noise, *conflict, *frames, *seed),
        Command::Selfcheck { seed } => cmd_selfcheck(*seed),
        Command::Replay { manifest } => {
            let m = RunManifest::read(manifest)?;
            if m.command == "replay" || m.argv.first().map(String::as_str) == Some("replay") {
                return Err(AppError::Validation("refusing to replay a replay".into()));
            }
            run(m.argv)
        }
    }
}

fn run(argv: Vec<String>) -> Result<()> {
    let full = std::iter::once("omniret".to_string()).chain(argv.iter().cloned());
    match Cli::try_parse_from(full) {
        Ok(cli) => dispatch(cli, argv),
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                Ok(())
            } else {
                Err(AppError::Validation(e.render().to_string().trim_end().to_string()))
            }
        }
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match std::panic::catch_unwind(|| run(argv)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
        Err(_) => ExitCode::from(3),
    }
}
