//! Browser bindings for the interactive demo page.
//!
//! Three operations are exposed to JavaScript, all returning JSON strings:
//! live surface metrics for typed text, margin-filter exploration over a
//! rollout set, and a miniature in-browser preference-training run with
//! loss/margin curves.

use serde::Serialize;
use speechworthy::align::{train, AlignConfig, MaskStrategy, SftConfig};
use speechworthy::corpus::{
    generate_style_corpus, mean_decode_nv, warmup_reference, CorpusSpec,
};
use speechworthy::metrics::{nv_percent, SegmenterLexicon, Segmenter, VocalizableTable};
use speechworthy::prefdata::{select_pairs, FilterConfig, RolloutGroup};
use speechworthy::tinylm::{greedy_decode, ModelConfig};
use wasm_bindgen::prelude::*;

fn err_json(message: impl std::fmt::Display) -> String {
    serde_json::json!({ "error": message.to_string() }).to_string()
}

#[derive(Serialize)]
struct CharClass {
    ch: char,
    vocalizable: bool,
    whitespace: bool,
}

/// Word count, NV%, token list, and per-character vocalizability for the
/// live metrics panel.
#[wasm_bindgen]
pub fn analyze_text(text: &str) -> String {
    let lexicon = SegmenterLexicon::bundled();
    let table = VocalizableTable::default();
    let tokens = lexicon.segment(text);
    let chars: Vec<CharClass> = text
        .chars()
        .map(|ch| CharClass {
            ch,
            vocalizable: table.is_vocalizable(ch),
            whitespace: ch.is_whitespace(),
        })
        .collect();
    serde_json::json!({
        "word_count": tokens.len(),
        "nv_percent": nv_percent(text),
        "tokens": tokens,
        "chars": chars,
    })
    .to_string()
}

/// Applies the margin filter to a JSON array of rollout groups and returns
/// the selected pairs plus the discard histogram.
#[wasm_bindgen]
pub fn filter_pairs(groups_json: &str, min_max_score: f64, margin_factor: f64) -> String {
    let groups: Vec<RolloutGroup> = match serde_json::from_str(groups_json) {
        Ok(g) => g,
        Err(e) => return err_json(format!("bad rollout JSON: {e}")),
    };
    let cfg = FilterConfig { min_max_score, margin_factor, all_qualifying: false };
    match select_pairs(&groups, &cfg) {
        Ok(outcome) => serde_json::to_string(&outcome).unwrap_or_else(err_json),
        Err(e) => err_json(e),
    }
}

#[derive(Serialize)]
struct DecodeSample {
    prompt: String,
    before: String,
    after: String,
}

/// Runs the miniature pipeline in the browser: warm-up on written-style
/// targets, preference training at the requested DPO weight, and style
/// probes before and after. Small model and corpus keep this interactive.
#[wasm_bindgen]
pub fn train_demo(dpo_weight: f64, beta: f64, seed: u32) -> String {
    let spec = CorpusSpec { train_pairs: 48, heldout_pairs: 12, seed: seed as u64 };
    let corpus = match generate_style_corpus(&spec) {
        Ok(c) => c,
        Err(e) => return err_json(e),
    };
    let model = ModelConfig { n_layers: 2, d_model: 32, n_heads: 2, d_ff: 64, context_len: 64 };
    let warm = SftConfig { learning_rate: 0.05, epochs: 6, seed: 1 };
    let reference = match warmup_reference(&corpus, model, 0, &warm) {
        Ok(r) => r,
        Err(e) => return err_json(e),
    };
    let align = AlignConfig {
        beta,
        dpo_weight,
        learning_rate: 0.15,
        epochs: 2,
        mask_strategy: MaskStrategy::KqLn,
        seed: 0,
        ..AlignConfig::default()
    };
    if let Err(e) = align.validate() {
        return err_json(e);
    }
    let probe: Vec<_> = corpus.heldout.iter().map(|ex| ex.prompt.clone()).collect();
    let nv_before = match mean_decode_nv(&reference, &corpus.vocab, &probe, 20) {
        Ok(v) => v,
        Err(e) => return err_json(e),
    };
    let (policy, report) = match train(
        &reference,
        &reference,
        &corpus.vocab,
        &corpus.train,
        &corpus.heldout,
        &align,
    ) {
        Ok(r) => r,
        Err(e) => return err_json(e),
    };
    let nv_after = match mean_decode_nv(&policy, &corpus.vocab, &probe, 20) {
        Ok(v) => v,
        Err(e) => return err_json(e),
    };

    let mut samples = Vec::new();
    for ex in corpus.heldout.iter().take(4) {
        let before = greedy_decode(&reference, &corpus.vocab, &ex.prompt, 20)
            .map(|o| corpus.vocab.decode_text(&o.ids))
            .unwrap_or_default();
        let after = greedy_decode(&policy, &corpus.vocab, &ex.prompt, 20)
            .map(|o| corpus.vocab.decode_text(&o.ids))
            .unwrap_or_default();
        samples.push(DecodeSample {
            prompt: corpus.vocab.decode_text(&ex.prompt.ids),
            before,
            after,
        });
    }

    let loss_curve: Vec<f64> = report.steps.iter().map(|s| s.combined_loss).collect();
    let margin_curve: Vec<f64> = report.steps.iter().map(|s| s.margin).collect();
    serde_json::json!({
        "loss_curve": loss_curve,
        "margin_curve": margin_curve,
        "heldout_accuracy": report.heldout_accuracy,
        "heldout_mean_margin": report.heldout_mean_margin,
        "nv_before": nv_before,
        "nv_after": nv_after,
        "decodes": samples,
    })
    .to_string()
}
