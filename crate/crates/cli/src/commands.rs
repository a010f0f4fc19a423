//! Subcommand implementations.

use crate::config::{runtime, validation, CliFailure, RunContext};
use anyhow::{anyhow, Context};
use clap::Args;
use serde::{Deserialize, Serialize};
use speechworthy::align::{
    load_preference_jsonl, save_preference_jsonl, tokenize_pair, train, AlignConfig, AlignError,
    MaskStrategy, Optimizer, PreferenceExample, SftConfig,
};
use speechworthy::corpus::{generate_style_corpus, mean_decode_nv, CorpusSpec};
use speechworthy::judge::{
    evaluate_benchmark, load_benchmark_jsonl, load_candidates_jsonl, save_summary_jsonl,
    EndpointConfig, EndpointScorer, HttpChatClient, JudgeError, RubricSpec,
};
use speechworthy::metrics::{
    corpus_report, load_conllu, DepthAggregation, ParserSet, SegmenterLexicon,
};
use speechworthy::prefdata::{
    groups_from_raw, load_rollout_jsonl, pairs_to_preference_rows, save_rollout_jsonl,
    select_pairs,
};
use speechworthy::tinylm::{
    load_checkpoint, save_checkpoint, ModelConfig, ModelParams, TokenSequence, Vocab,
};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

fn align_failure(e: AlignError) -> CliFailure {
    match e {
        AlignError::NonFiniteLoss { .. } => runtime(e),
        other => validation(other),
    }
}

fn parse_mask(s: &str) -> anyhow::Result<MaskStrategy> {
    match s {
        "kq-ln" | "kq_ln" => Ok(MaskStrategy::KqLn),
        "none" => Ok(MaskStrategy::None),
        other => {
            let n = other
                .strip_prefix("top-layers:")
                .or_else(|| other.strip_prefix("top_layers:"))
                .ok_or_else(|| {
                    anyhow!("mask must be kq-ln, none, or top-layers:N, got {other:?}")
                })?;
            Ok(MaskStrategy::TopLayers(n.parse().context("layer count in top-layers:N")?))
        }
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

// ---------------------------------------------------------------------
// gen-corpus
// ---------------------------------------------------------------------

#[derive(Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 500)]
    train_pairs: usize,
    #[arg(long, default_value_t = 100)]
    heldout_pairs: usize,
}

pub fn gen_corpus(ctx: &RunContext, args: GenCorpusArgs) -> Result<(), CliFailure> {
    let spec = CorpusSpec {
        train_pairs: args.train_pairs,
        heldout_pairs: args.heldout_pairs,
        seed: ctx.seed,
    };
    let corpus = generate_style_corpus(&spec).map_err(align_failure)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| validation(anyhow!(e)))?;
    let meta = ctx.meta(&spec);
    save_preference_jsonl(&args.out_dir.join("train.jsonl"), &corpus.train_raw, Some(meta.clone()))
        .map_err(align_failure)?;
    save_preference_jsonl(
        &args.out_dir.join("heldout.jsonl"),
        &corpus.heldout_raw,
        Some(meta),
    )
    .map_err(align_failure)?;
    corpus
        .vocab
        .save(&args.out_dir.join("vocab.txt"))
        .map_err(|e| validation(anyhow!(e)))?;
    println!(
        "wrote {} train and {} heldout pairs to {} (vocab {} tokens)",
        corpus.train_raw.len(),
        corpus.heldout_raw.len(),
        args.out_dir.display(),
        corpus.vocab.size()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// train-toy
// ---------------------------------------------------------------------

#[derive(Args)]
pub struct TrainToyArgs {
    /// Preference pairs JSONL (prompt/chosen/rejected text).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Held-out pairs for accuracy, margin, and the decode NV% probe.
    #[arg(long)]
    heldout: Option<PathBuf>,
    /// Start from this checkpoint instead of init + warm-up.
    #[arg(long)]
    init_checkpoint: Option<PathBuf>,
    /// Vocabulary file; defaults to the checkpoint's or one built from the
    /// dataset.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    dpo_weight: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// kq-ln, top-layers:N, or none.
    #[arg(long)]
    mask: Option<String>,
    /// sgd or adam.
    #[arg(long)]
    optimizer: Option<String>,
    /// Warm-up epochs of supervised training on the rejected responses
    /// (builds the written-style reference when no checkpoint is given).
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    warmup_lr: Option<f64>,
}

#[derive(Serialize)]
struct TrainEffectiveConfig<'a> {
    align: &'a AlignConfig,
    warmup: &'a SftConfig,
    model: ModelConfig,
    seed: u64,
}

pub fn train_toy(ctx: &RunContext, args: TrainToyArgs) -> Result<(), CliFailure> {
    let mut align_cfg = ctx.file.align.clone().unwrap_or_default();
    align_cfg.seed = ctx.seed;
    if let Some(w) = args.dpo_weight {
        align_cfg.dpo_weight = w;
    }
    if let Some(b) = args.beta {
        align_cfg.beta = b;
    }
    if let Some(lr) = args.learning_rate {
        align_cfg.learning_rate = lr;
    }
    if let Some(e) = args.epochs {
        align_cfg.epochs = e;
    }
    if let Some(mask) = &args.mask {
        align_cfg.mask_strategy = parse_mask(mask).map_err(validation)?;
    }
    if let Some(opt) = &args.optimizer {
        align_cfg.optimizer = match opt.as_str() {
            "sgd" => Optimizer::Sgd,
            "adam" => Optimizer::adam_default(),
            other => return Err(validation(anyhow!("optimizer must be sgd or adam, got {other:?}"))),
        };
    }
    align_cfg.validate().map_err(align_failure)?;

    let mut warmup = ctx.file.warmup.clone().unwrap_or_default();
    if let Some(e) = args.warmup_epochs {
        warmup.epochs = e;
    }
    if let Some(lr) = args.warmup_lr {
        warmup.learning_rate = lr;
    }

    let train_raw = load_preference_jsonl(&args.data).map_err(align_failure)?;
    if train_raw.is_empty() {
        return Err(validation(anyhow!("dataset {} has no examples", args.data.display())));
    }
    let heldout_raw = match &args.heldout {
        Some(p) => load_preference_jsonl(p).map_err(align_failure)?,
        None => Vec::new(),
    };

    // Resolve vocabulary and starting reference model.
    let (reference, vocab) = if let Some(ckpt_path) = &args.init_checkpoint {
        let ckpt = load_checkpoint(ckpt_path).map_err(|e| validation(anyhow!(e)))?;
        (ckpt.params, ckpt.vocab)
    } else {
        let vocab = match &args.vocab {
            Some(p) => Vocab::load(p).map_err(|e| validation(anyhow!(e)))?,
            None => {
                let mut texts = Vec::new();
                for ex in train_raw.iter().chain(&heldout_raw) {
                    texts.push(ex.prompt.clone());
                    texts.push(ex.chosen.clone());
                    texts.push(ex.rejected.clone());
                }
                Vocab::from_corpus(&texts).map_err(|e| validation(anyhow!(e)))?
            }
        };
        let model = ModelConfig::toy_default();
        let init = ModelParams::init(model, vocab.size(), ctx.seed)
            .map_err(|e| validation(anyhow!(e)))?;
        let reference = if warmup.epochs > 0 {
            let data: Vec<speechworthy::align::SftExample> = train_raw
                .iter()
                .map(|r| {
                    Ok(speechworthy::align::SftExample {
                        prompt: vocab.encode_prompt(&r.prompt)?,
                        target: vocab.encode_response(&r.rejected)?,
                    })
                })
                .collect::<Result<_, speechworthy::tinylm::ModelError>>()
                .map_err(|e| validation(anyhow!(e)))?;
            speechworthy::align::train_sft(&init, &vocab, &data, &warmup)
                .map_err(align_failure)?
                .0
        } else {
            init
        };
        (reference, vocab)
    };

    let tokenize_all = |raws: &[speechworthy::align::RawPreferenceExample]| {
        raws.iter()
            .map(|r| tokenize_pair(r, &vocab))
            .collect::<Result<Vec<PreferenceExample>, AlignError>>()
    };
    let train_set = tokenize_all(&train_raw).map_err(align_failure)?;
    let heldout_set = tokenize_all(&heldout_raw).map_err(align_failure)?;

    let probe: Vec<TokenSequence> =
        heldout_set.iter().take(32).map(|ex| ex.prompt.clone()).collect();
    let nv_before = if probe.is_empty() {
        None
    } else {
        Some(mean_decode_nv(&reference, &vocab, &probe, 24).map_err(align_failure)?)
    };

    let (policy, report) = train(&reference, &reference, &vocab, &train_set, &heldout_set, &align_cfg)
        .map_err(align_failure)?;

    let nv_after = if probe.is_empty() {
        None
    } else {
        Some(mean_decode_nv(&policy, &vocab, &probe, 24).map_err(align_failure)?)
    };

    std::fs::create_dir_all(&args.out_dir).map_err(|e| validation(anyhow!(e)))?;
    let effective = TrainEffectiveConfig {
        align: &align_cfg,
        warmup: &warmup,
        model: policy.cfg,
        seed: ctx.seed,
    };
    let meta = ctx.meta(&effective);
    save_checkpoint(&args.out_dir.join("checkpoint.json"), &policy, &vocab, Some(meta.clone()))
        .map_err(|e| runtime(anyhow!(e)))?;
    report
        .write_jsonl(&args.out_dir.join("train_report.jsonl"), Some(meta.clone()))
        .map_err(align_failure)?;
    let summary = serde_json::json!({
        "meta": meta,
        "steps": report.steps.len(),
        "heldout_accuracy": report.heldout_accuracy,
        "heldout_mean_margin": report.heldout_mean_margin,
        "nv_before": nv_before,
        "nv_after": nv_after,
    });
    write_json(&args.out_dir.join("run_summary.json"), &summary)
        .map_err(|e| runtime(anyhow!(e)))?;
    println!(
        "trained {} steps; heldout accuracy {:?}, mean margin {:?}, NV% {:?} -> {:?}",
        report.steps.len(),
        report.heldout_accuracy,
        report.heldout_mean_margin,
        nv_before,
        nv_after
    );
    Ok(())
}

// ---------------------------------------------------------------------
// score-rollouts
// ---------------------------------------------------------------------

#[derive(Args)]
pub struct ScoreRolloutsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    max_attempts: Option<u32>,
}

fn endpoint_config(
    ctx: &RunContext,
    endpoint: Option<&String>,
    model: Option<&String>,
    concurrency: Option<usize>,
    max_attempts: Option<u32>,
) -> EndpointConfig {
    let mut cfg = ctx.file.endpoint.clone().unwrap_or_default();
    if let Some(url) = endpoint {
        cfg.url = url.clone();
    }
    if let Some(model) = model {
        cfg.model = model.clone();
    }
    if let Some(c) = concurrency {
        cfg.concurrency = c;
    }
    if let Some(a) = max_attempts {
        cfg.max_attempts = a;
    }
    cfg
}

pub fn score_rollouts(ctx: &RunContext, args: ScoreRolloutsArgs) -> Result<(), CliFailure> {
    let cfg = endpoint_config(
        ctx,
        args.endpoint.as_ref(),
        args.model.as_ref(),
        args.concurrency,
        args.max_attempts,
    );
    let groups = load_rollout_jsonl(&args.input).map_err(|e| validation(anyhow!(e)))?;
    let client = HttpChatClient::new(cfg.clone()).map_err(|e| runtime(anyhow!(e)))?;
    let scorer = EndpointScorer { client: &client, config: &cfg };
    let scored = speechworthy::prefdata::score_rollouts(&groups, &scorer, cfg.concurrency);
    for failure in &scored.failures {
        eprintln!(
            "warning: instruction {} rollout {}: {}",
            failure.instruction_id, failure.rollout_index, failure.error
        );
    }
    let total: usize = groups.iter().map(|g| g.rollouts.len()).sum();
    if !scored.failures.is_empty() && scored.failures.len() == total {
        return Err(runtime(anyhow!("all {total} rollouts failed to score")));
    }
    let meta = ctx.meta(&cfg);
    save_rollout_jsonl(&args.output, &scored.groups, Some(meta))
        .map_err(|e| runtime(anyhow!(e)))?;
    println!(
        "scored {} rollouts across {} instructions ({} failures)",
        total - scored.failures.len(),
        scored.groups.len(),
        scored.failures.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// make-pairs
// ---------------------------------------------------------------------

#[derive(Args)]
pub struct MakePairsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    min_max_score: Option<f64>,
    #[arg(long)]
    margin_factor: Option<f64>,
    /// Emit one pair per qualifying rejected rollout.
    #[arg(long)]
    all_qualifying: bool,
}

pub fn make_pairs(ctx: &RunContext, args: MakePairsArgs) -> Result<(), CliFailure> {
    let mut cfg = ctx.file.filter.unwrap_or_default();
    if let Some(m) = args.min_max_score {
        cfg.min_max_score = m;
    }
    if let Some(f) = args.margin_factor {
        cfg.margin_factor = f;
    }
    if args.all_qualifying {
        cfg.all_qualifying = true;
    }
    let raw = load_rollout_jsonl(&args.input).map_err(|e| validation(anyhow!(e)))?;
    let groups = groups_from_raw(&raw).map_err(|e| validation(anyhow!(e)))?;
    let outcome = select_pairs(&groups, &cfg).map_err(|e| validation(anyhow!(e)))?;
    let rows = pairs_to_preference_rows(&outcome.pairs);
    let meta = ctx.meta(&cfg);
    save_preference_jsonl(&args.output, &rows, Some(meta.clone())).map_err(align_failure)?;

    let discards: BTreeMap<String, usize> = outcome
        .discards
        .iter()
        .map(|(k, v)| (format!("{k:?}"), *v))
        .collect();
    let summary = serde_json::json!({
        "meta": meta,
        "instructions_in": outcome.groups_in,
        "pairs_out": outcome.pairs.len(),
        "discards": outcome.discards,
    });
    let summary_path = args.output.with_extension("summary.json");
    write_json(&summary_path, &summary).map_err(|e| runtime(anyhow!(e)))?;
    println!(
        "instructions in: {}, pairs out: {}, discards: {:?}",
        outcome.groups_in,
        outcome.pairs.len(),
        discards
    );
    Ok(())
}

// ---------------------------------------------------------------------
// eval-surface
// ---------------------------------------------------------------------

#[derive(Args)]
pub struct EvalSurfaceArgs {
    /// JSONL of {id?, response}.
    #[arg(long)]
    responses: PathBuf,
    /// Directory of per-parser .conllu files (one document per response).
    #[arg(long)]
    parses: Option<PathBuf>,
    /// Lexicon file (one surface form per line); bundled lexicon if omitted.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// max or mean (per-response aggregation over sentences).
    #[arg(long, default_value = "max")]
    depth_agg: String,
    /// JSON report output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Deserialize)]
struct ResponseRow {
    #[serde(default)]
    id: Option<String>,
    response: String,
}

pub fn eval_surface(ctx: &RunContext, args: EvalSurfaceArgs) -> Result<(), CliFailure> {
    let text = std::fs::read_to_string(&args.responses).map_err(|e| validation(anyhow!(e)))?;
    let mut ids = Vec::new();
    let mut responses = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| validation(anyhow!("line {}: {e}", ln + 1)))?;
        if value.get("_meta").is_some() {
            continue;
        }
        let row: ResponseRow = serde_json::from_value(value)
            .map_err(|e| validation(anyhow!("line {}: {e}", ln + 1)))?;
        ids.push(row.id.unwrap_or_else(|| format!("row-{}", ln + 1)));
        responses.push(row.response);
    }
    if responses.is_empty() {
        return Err(validation(anyhow!("no responses in {}", args.responses.display())));
    }

    let lexicon = match &args.lexicon {
        Some(p) => SegmenterLexicon::load(p).map_err(|e| validation(anyhow!(e)))?,
        None => SegmenterLexicon::bundled(),
    };
    let aggregation = match args.depth_agg.as_str() {
        "max" => DepthAggregation::MaxOverSentences,
        "mean" => DepthAggregation::MeanOverSentences,
        other => return Err(validation(anyhow!("depth-agg must be max or mean, got {other:?}"))),
    };

    let mut parser_sets = Vec::new();
    if let Some(dir) = &args.parses {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| validation(anyhow!(e)))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "conllu"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(validation(anyhow!("no .conllu files in {}", dir.display())));
        }
        for path in paths {
            let docs = load_conllu(&path).map_err(|e| validation(anyhow!(e)))?;
            let label = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "parser".into());
            parser_sets.push(ParserSet {
                label,
                docs: docs.into_iter().map(|d| d.sentences).collect(),
            });
        }
    }

    let report = corpus_report(&responses, &parser_sets, &lexicon, aggregation)
        .map_err(|e| validation(anyhow!(e)))?;

    println!("surface metrics over {} responses", report.per_response.len());
    println!("  mean word count : {:.2}", report.mean_word_count);
    match report.mean_dep_depth {
        Some(d) => println!("  mean dep depth  : {d:.2}"),
        None => println!("  mean dep depth  : n/a (no parses)"),
    }
    println!("  mean NV%        : {:.2}", report.mean_nv_percent);
    if report.depth_skipped > 0 {
        println!("  (depth skipped for {} responses)", report.depth_skipped);
    }
    println!("  {:<12} {:>10} {:>10} {:>8}", "id", "word_count", "dep_depth", "NV%");
    for (id, r) in ids.iter().zip(&report.per_response) {
        let depth = r.dep_depth.map_or("-".to_string(), |d| format!("{d:.2}"));
        println!("  {:<12} {:>10} {:>10} {:>8.2}", id, r.word_count, depth, r.nv_percent);
    }

    #[derive(Serialize)]
    struct Effective<'a> {
        lexicon: Option<&'a Path>,
        depth_agg: &'a str,
    }
    let meta = ctx.meta(&Effective {
        lexicon: args.lexicon.as_deref(),
        depth_agg: &args.depth_agg,
    });
    let per_response: Vec<serde_json::Value> = ids
        .iter()
        .zip(&report.per_response)
        .map(|(id, r)| {
            serde_json::json!({
                "id": id,
                "word_count": r.word_count,
                "dep_depth": r.dep_depth,
                "nv_percent": r.nv_percent,
            })
        })
        .collect();
    let json = serde_json::json!({
        "meta": meta,
        "mean_word_count": report.mean_word_count,
        "mean_dep_depth": report.mean_dep_depth,
        "mean_nv_percent": report.mean_nv_percent,
        "depth_skipped": report.depth_skipped,
        "per_response": per_response,
    });
    write_json(&args.out, &json).map_err(|e| runtime(anyhow!(e)))?;
    Ok(())
}

// ---------------------------------------------------------------------
// eval-judge
// ---------------------------------------------------------------------

#[derive(Args)]
pub struct EvalJudgeArgs {
    #[arg(long)]
    benchmark: PathBuf,
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    max_attempts: Option<u32>,
    /// Rubric JSON file overriding the bundled five-level rubric.
    #[arg(long)]
    rubric: Option<PathBuf>,
    /// Per-item outcomes and summary JSONL.
    #[arg(long)]
    out: PathBuf,
}

pub fn eval_judge(ctx: &RunContext, args: EvalJudgeArgs) -> Result<(), CliFailure> {
    let cfg = endpoint_config(
        ctx,
        args.endpoint.as_ref(),
        args.model.as_ref(),
        args.concurrency,
        args.max_attempts,
    );
    let items = load_benchmark_jsonl(&args.benchmark).map_err(|e| validation(anyhow!(e)))?;
    if items.is_empty() {
        return Err(validation(anyhow!("benchmark {} is empty", args.benchmark.display())));
    }
    let candidates = load_candidates_jsonl(&args.candidates).map_err(|e| validation(anyhow!(e)))?;
    let rubric = match &args.rubric {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| validation(anyhow!(e)))?;
            let levels = serde_json::from_str(&text)
                .map_err(|e| validation(anyhow!("parsing rubric {}: {e}", p.display())))?;
            RubricSpec::new(levels).map_err(|e| validation(anyhow!(e)))?
        }
        None => RubricSpec::default(),
    };
    let client = HttpChatClient::new(cfg.clone()).map_err(|e| runtime(anyhow!(e)))?;
    let summary = evaluate_benchmark(&items, &candidates, &rubric, &client, &cfg).map_err(|e| {
        match e {
            JudgeError::NoSuccessfulItems => runtime(e),
            other => validation(other),
        }
    })?;
    let meta = ctx.meta(&cfg);
    save_summary_jsonl(&args.out, &summary, Some(meta)).map_err(|e| runtime(anyhow!(e)))?;
    println!(
        "mean score {:.2} over {} items ({} failures)",
        summary.mean_2dp(),
        summary.per_item.len(),
        summary.failure_count
    );
    Ok(())
}
